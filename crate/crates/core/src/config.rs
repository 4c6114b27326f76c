//! Run configuration: a JSON object whose omitted keys take the scenario
//! defaults. Unknown keys and out-of-range values are rejected with the
//! dotted path of the offending key.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::experiment::Condition;
use crate::learning::Hyper;
use crate::policy::{DecaySchedule, PolicyConfig};
use crate::rewards::RewardConfig;
use crate::rf::{GpsNoiseModel, LinkBudget, TerminationConfig};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("malformed configuration: {0}")]
    Malformed(String),
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {reason}")]
    OutOfRange { key: String, reason: String },
    #[error("invalid override `{0}`, expected key=value")]
    BadOverride(String),
}

fn range(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::OutOfRange {
        key: key.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Map file; `None` selects the bundled scenario.
    pub map: Option<PathBuf>,
    pub episodes: usize,
    pub max_steps: usize,
    pub monte_carlo_runs: usize,
    pub base_seed: u64,
    pub condition: Condition,
    pub hyper: Hyper,
    pub policy: PolicyConfig,
    pub rewards: RewardConfig,
    pub link: LinkBudget,
    pub termination: TerminationConfig,
    pub gps: GpsNoiseModel,
    /// 1-based episodes whose Pavlovian fields are captured; numbers past
    /// `episodes` are ignored.
    pub snapshot_episodes: Vec<usize>,
    /// Use the Pavlovian potential for post-cue shaping.
    pub shaping: bool,
    /// Keep the post-cue phase across episodes instead of resetting it.
    pub persist_cue_phase: bool,
    /// Pre-cue updates in Pavlovian conditions bootstrap from the action the
    /// biased policy would pick greedily rather than from the instrumental max.
    pub biased_bootstrap: bool,
    /// Optional moving-average window for an extra smoothed learning curve.
    pub smoothing_window: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            map: None,
            episodes: 2400,
            max_steps: 800,
            monte_carlo_runs: 60,
            base_seed: 1,
            condition: Condition::FullHybrid,
            hyper: Hyper::default(),
            policy: PolicyConfig::default(),
            rewards: RewardConfig::default(),
            link: LinkBudget::default(),
            termination: TerminationConfig::default(),
            gps: GpsNoiseModel::default(),
            snapshot_episodes: vec![1, 400],
            shaping: true,
            persist_cue_phase: false,
            biased_bootstrap: true,
            smoothing_window: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.episodes < 1 {
            return Err(range("episodes", "must be at least 1"));
        }
        if self.monte_carlo_runs < 1 {
            return Err(range("monte_carlo_runs", "must be at least 1"));
        }
        if let Some(&bad) = self.snapshot_episodes.iter().find(|&&e| e < 1) {
            return Err(range(
                "snapshot_episodes",
                format!("episode numbers start at 1, got {bad}"),
            ));
        }
        if self.smoothing_window == Some(0) {
            return Err(range("smoothing_window", "must be at least 1"));
        }

        let h = &self.hyper;
        check_schedule("hyper.alpha", &h.alpha, false)?;
        if h.alpha.start > 1.0 {
            return Err(range("hyper.alpha.start", "must be at most 1"));
        }
        if !(h.gamma > 0.0 && h.gamma < 1.0) {
            return Err(range("hyper.gamma", "must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&h.trace_lambda) {
            return Err(range("hyper.trace_lambda", "must lie in [0, 1]"));
        }
        if !(h.ema_decay > 0.0 && h.ema_decay < 1.0) {
            return Err(range("hyper.ema_decay", "must lie in (0, 1)"));
        }
        if !(h.sharpness > 0.0 && h.sharpness.is_finite()) {
            return Err(range("hyper.sharpness", "must be positive"));
        }

        check_schedule("policy.temperature", &self.policy.temperature, true)?;
        if !(self.policy.pav_weight >= 0.0 && self.policy.pav_weight.is_finite()) {
            return Err(range("policy.pav_weight", "must be non-negative"));
        }

        let r = &self.rewards;
        for (key, v) in [
            ("rewards.collision_penalty", r.collision_penalty),
            ("rewards.gate_reward", r.gate_reward),
            ("rewards.gps_denied_penalty", r.gps_denied_penalty),
            ("rewards.nlos_penalty", r.nlos_penalty),
            ("rewards.rss_reference", r.rss_reference),
            ("rewards.terminal_bonus", r.terminal_bonus),
        ] {
            if !v.is_finite() {
                return Err(range(key, "must be finite"));
            }
        }
        if !(r.rss_scale >= 0.0 && r.rss_scale.is_finite()) {
            return Err(range("rewards.rss_scale", "must be non-negative"));
        }

        let l = &self.link;
        if !(l.bandwidth > 0.0) {
            return Err(range("link.bandwidth", "must be positive"));
        }
        if !(l.carrier_frequency > 0.0) {
            return Err(range("link.carrier_frequency", "must be positive"));
        }
        if !(l.beta_los > 0.0) {
            return Err(range("link.beta_los", "must be positive"));
        }
        if !(l.beta_nlos >= l.beta_los) {
            return Err(range("link.beta_nlos", "must be at least beta_los"));
        }
        for (key, v) in [
            ("link.tx_power", l.tx_power),
            ("link.tx_gain", l.tx_gain),
            ("link.rx_gain", l.rx_gain),
            ("link.noise_figure", l.noise_figure),
        ] {
            if !v.is_finite() {
                return Err(range(key, "must be finite"));
            }
        }

        let t = &self.termination;
        if !(t.peb_threshold > 0.0) {
            return Err(range("termination.peb_threshold", "must be positive"));
        }
        if !(t.rss_noise_sigma > 0.0) {
            return Err(range("termination.rss_noise_sigma", "must be positive"));
        }
        if t.min_agents < 1 {
            return Err(range("termination.min_agents", "must be at least 1"));
        }
        if !(self.gps.variance_per_axis >= 0.0 && self.gps.variance_per_axis.is_finite()) {
            return Err(range("gps.variance_per_axis", "must be non-negative"));
        }
        Ok(())
    }

    /// Pretty-printed JSON with every key present.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn check_schedule(key: &str, s: &DecaySchedule, floor_positive: bool) -> Result<(), ConfigError> {
    if !(s.start > 0.0 && s.start.is_finite()) {
        return Err(range(&format!("{key}.start"), "must be positive"));
    }
    if !(s.factor > 0.0 && s.factor <= 1.0) {
        return Err(range(&format!("{key}.factor"), "must lie in (0, 1]"));
    }
    if floor_positive && !(s.floor > 0.0) {
        return Err(range(&format!("{key}.floor"), "must be positive"));
    }
    if !(s.floor >= 0.0 && s.floor <= s.start) {
        return Err(range(&format!("{key}.floor"), "must lie in [0, start]"));
    }
    Ok(())
}

/// Reports the first key of `given` that the default document lacks.
fn find_unknown_key(
    given: &Map<String, Value>,
    known: &Map<String, Value>,
    prefix: &str,
) -> Option<String> {
    for (k, v) in given {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match known.get(k) {
            None => return Some(path),
            Some(Value::Object(sub_known)) => {
                if let Value::Object(sub_given) = v {
                    if let Some(p) = find_unknown_key(sub_given, sub_known, &path) {
                        return Some(p);
                    }
                }
            }
            Some(_) => {}
        }
    }
    None
}

fn parse_value(value: Value) -> Result<RunConfig, ConfigError> {
    let Value::Object(given) = &value else {
        return Err(ConfigError::Malformed("top level must be an object".into()));
    };
    let known = serde_json::to_value(RunConfig::default()).expect("default serializes");
    let Value::Object(known) = known else {
        unreachable!("config serializes to an object")
    };
    if let Some(key) = find_unknown_key(given, &known, "") {
        return Err(ConfigError::UnknownKey(key));
    }
    let cfg: RunConfig =
        serde_json::from_value(value).map_err(|e| ConfigError::Malformed(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parses a configuration document, filling every omitted key with its
/// default.
pub fn parse_config(document: &str) -> Result<RunConfig, ConfigError> {
    parse_config_with_overrides(document, &[])
}

/// Like [`parse_config`], then applies `key=value` overrides (dotted keys,
/// values parsed as JSON and falling back to plain strings) before
/// validation.
pub fn parse_config_with_overrides(
    document: &str,
    overrides: &[String],
) -> Result<RunConfig, ConfigError> {
    let mut value: Value =
        serde_json::from_str(document).map_err(|e| ConfigError::Malformed(e.to_string()))?;
    for ov in overrides {
        apply_override(&mut value, ov)?;
    }
    parse_value(value)
}

fn apply_override(doc: &mut Value, ov: &str) -> Result<(), ConfigError> {
    let (key, raw) = ov
        .split_once('=')
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| ConfigError::BadOverride(ov.to_string()))?;
    let new_value =
        serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cursor = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let Value::Object(obj) = cursor else {
            return Err(ConfigError::BadOverride(ov.to_string()));
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), new_value);
            return Ok(());
        }
        cursor = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}
