//! File emission: learning-curve CSVs, Pavlovian field, trajectory and
//! action-value CSVs, the run manifest, and optional SVG renderings.
//!
//! Every file is written only after all runs have finished. Numbers use the
//! shortest round-trip decimal form so identical inputs give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::experiment::{
    moving_average, AgentTables, Condition, FieldSnapshot, MonteCarloResult, TrainingResult,
};
use crate::grid::{Action, Coord, GridMap};
use crate::learning::QTable;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
}

/// Enough to reproduce every emitted file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub conditions: Vec<Condition>,
    pub seeds: Vec<u64>,
    pub config: RunConfig,
    pub files: Vec<String>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, OutputError> {
        let text = fs::read_to_string(path).map_err(|source| OutputError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| OutputError::Manifest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

pub const MANIFEST_FILE: &str = "run_manifest.json";

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<String, OutputError> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| OutputError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(&path, contents).map_err(|source| OutputError::Io { path, source })?;
    Ok(name.to_string())
}

/// `episode` followed by mean and standard deviation columns per condition.
pub fn learning_curve_csv(results: &[MonteCarloResult]) -> String {
    let mut out = String::from("episode");
    for r in results {
        let c = r.aggregate.condition;
        let _ = write!(out, ",{c}_mean_steps,{c}_std_steps");
    }
    out.push('\n');
    let n = results.first().map_or(0, |r| r.aggregate.episodes.len());
    for e in 0..n {
        let _ = write!(out, "{}", e + 1);
        for r in results {
            let ep = &r.aggregate.episodes[e];
            let _ = write!(out, ",{},{}", ep.mean_steps, ep.std_steps);
        }
        out.push('\n');
    }
    out
}

/// Trailing moving average of each condition's mean curve.
pub fn smoothed_curve_csv(results: &[MonteCarloResult], window: usize) -> String {
    let mut out = String::from("episode");
    let curves: Vec<Vec<f64>> = results
        .iter()
        .map(|r| {
            let _ = write!(out, ",{}_mean_steps_ma{window}", r.aggregate.condition);
            moving_average(&r.aggregate.mean_curve(), window)
        })
        .collect();
    out.push('\n');
    let n = curves.first().map_or(0, Vec::len);
    for e in 0..n {
        let _ = write!(out, "{}", e + 1);
        for c in &curves {
            let _ = write!(out, ",{}", c[e]);
        }
        out.push('\n');
    }
    out
}

/// Per-episode statistics of one condition. The `mean_p_mb` column is only
/// present when arbitration is active.
pub fn episode_stats_csv(result: &MonteCarloResult) -> String {
    let with_pmb = result.aggregate.condition.model_based();
    let mut out = String::from("episode,mean_steps,std_steps,success_rate");
    if with_pmb {
        out.push_str(",mean_p_mb");
    }
    out.push('\n');
    for ep in &result.aggregate.episodes {
        let _ = write!(
            out,
            "{},{},{},{}",
            ep.episode, ep.mean_steps, ep.std_steps, ep.success_rate
        );
        if with_pmb {
            out.push(',');
            if let Some(p) = ep.mean_p_mb {
                let _ = write!(out, "{p}");
            }
        }
        out.push('\n');
    }
    out
}

/// `x,y,v_pav` in row-major order from `y = 0`; obstacles have an empty
/// value.
pub fn field_csv(snapshot: &FieldSnapshot) -> String {
    let mut out = String::from("x,y,v_pav\n");
    for (y, row) in snapshot.field.iter().enumerate() {
        for (x, v) in row.iter().enumerate() {
            match v {
                Some(v) => {
                    let _ = writeln!(out, "{x},{y},{v}");
                }
                None => {
                    let _ = writeln!(out, "{x},{y},");
                }
            }
        }
    }
    out
}

pub fn trajectory_csv(path: &[Coord]) -> String {
    let mut out = String::from("step,x,y\n");
    for (t, c) in path.iter().enumerate() {
        let _ = writeln!(out, "{t},{},{}", c.x, c.y);
    }
    out
}

/// One row per state: index, cell and the five action values in action
/// order.
pub fn q_table_csv(map: &GridMap, q: &QTable) -> String {
    let mut out = String::from("state,x,y");
    for a in Action::ALL {
        let _ = write!(out, ",{}", a.name());
    }
    out.push('\n');
    for s in 0..q.num_states() {
        let c = map.coord(s);
        let _ = write!(out, "{s},{},{}", c.x, c.y);
        for v in q.row(s) {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn field_file_name(condition: Condition, snapshot: &FieldSnapshot) -> String {
    format!(
        "fields_{condition}/pav_field_ep{}_agent{}.csv",
        snapshot.episode, snapshot.agent
    )
}

pub fn trajectory_file_name(condition: Condition, agent: usize) -> String {
    format!("trajectory_{condition}_agent{agent}.csv")
}

/// `table` is one of `q_mf`, `q_mb` or `q_pav`.
pub fn table_file_name(condition: Condition, table: &str, agent: usize) -> String {
    format!("tables_{condition}/{table}_agent{agent}.csv")
}

const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Mean learning curves as SVG polylines on shared axes.
pub fn learning_curve_svg(results: &[MonteCarloResult]) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let n = results
        .first()
        .map_or(0, |r| r.aggregate.episodes.len())
        .max(2);
    let y_max = results
        .iter()
        .flat_map(|r| r.aggregate.mean_curve())
        .fold(1.0_f64, f64::max);
    let sx = |e: usize| pad + (w - 2.0 * pad) * e as f64 / (n - 1) as f64;
    let sy = |v: f64| h - pad - (h - 2.0 * pad) * v / y_max;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    );
    let _ = writeln!(
        out,
        "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n<path d=\"M{pad} {pad} V{} H{}\" stroke=\"black\" fill=\"none\"/>",
        h - pad,
        w - pad
    );
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">episode</text>",
        w / 2.0,
        h - 15.0
    );
    let _ = writeln!(
        out,
        "<text x=\"15\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 15 {})\" text-anchor=\"middle\">mean steps (max {y_max:.0})</text>",
        h / 2.0,
        h / 2.0
    );
    for (i, r) in results.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut points = String::new();
        for (e, v) in r.aggregate.mean_curve().iter().enumerate() {
            let _ = write!(points, "{:.2},{:.2} ", sx(e), sy(*v));
        }
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1\"/>",
            points.trim_end()
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{}</text>",
            w - pad - 170.0,
            pad + 15.0 * (i as f64 + 1.0),
            r.aggregate.condition
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Cell heatmap of a Pavlovian field, blue for negative and red for
/// positive values; obstacles are black. Rows are flipped so `y` grows
/// upward.
pub fn field_svg(snapshot: &FieldSnapshot) -> String {
    let cell = 16.0;
    let height = snapshot.field.len();
    let width = snapshot.field.first().map_or(0, Vec::len);
    let scale = snapshot
        .field
        .iter()
        .flatten()
        .flatten()
        .fold(1e-12_f64, |m, v| m.max(v.abs()));
    let (w, h) = (width as f64 * cell, height as f64 * cell);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    );
    for (y, row) in snapshot.field.iter().enumerate() {
        for (x, v) in row.iter().enumerate() {
            let fill = match v {
                None => "#000000".to_string(),
                Some(v) => {
                    let t = (v / scale).clamp(-1.0, 1.0);
                    let fade = (255.0 * (1.0 - t.abs())).round() as u8;
                    if t >= 0.0 {
                        format!("#ff{fade:02x}{fade:02x}")
                    } else {
                        format!("#{fade:02x}{fade:02x}ff")
                    }
                }
            };
            let _ = writeln!(
                out,
                "<rect x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" fill=\"{fill}\"/>",
                x as f64 * cell,
                (height - 1 - y) as f64 * cell
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Writes every output file for `results` (one entry per condition, all
/// sharing `cfg` apart from the condition) into `dir` and returns the
/// relative paths written, manifest last.
pub fn emit_outputs(
    dir: &Path,
    map: &GridMap,
    cfg: &RunConfig,
    results: &[MonteCarloResult],
    svg: bool,
) -> Result<Vec<String>, OutputError> {
    let mut files = vec![write_file(
        dir,
        "learning_curve.csv",
        &learning_curve_csv(results),
    )?];
    if let Some(window) = cfg.smoothing_window {
        files.push(write_file(
            dir,
            "learning_curve_smoothed.csv",
            &smoothed_curve_csv(results, window),
        )?);
    }
    if svg {
        files.push(write_file(
            dir,
            "learning_curve.svg",
            &learning_curve_svg(results),
        )?);
    }
    for r in results {
        let c = r.aggregate.condition;
        files.push(write_file(
            dir,
            &format!("episode_stats_{c}.csv"),
            &episode_stats_csv(r),
        )?);
        files.extend(emit_condition_artifacts(
            dir,
            map,
            c,
            &r.representative,
            svg,
        )?);
    }
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        conditions: results.iter().map(|r| r.aggregate.condition).collect(),
        seeds: results
            .first()
            .map_or_else(Vec::new, |r| r.aggregate.seeds.clone()),
        config: cfg.clone(),
        files: files.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    files.push(write_file(dir, MANIFEST_FILE, &json)?);
    Ok(files)
}

/// Field snapshots (Pavlovian conditions only), final trajectories and
/// final action-value tables of one training run.
pub fn emit_condition_artifacts(
    dir: &Path,
    map: &GridMap,
    condition: Condition,
    run: &TrainingResult,
    svg: bool,
) -> Result<Vec<String>, OutputError> {
    let mut files = Vec::new();
    if condition.pavlovian() {
        for snap in &run.snapshots {
            let name = field_file_name(condition, snap);
            files.push(write_file(dir, &name, &field_csv(snap))?);
            if svg {
                let svg_name = name.trim_end_matches(".csv").to_string() + ".svg";
                files.push(write_file(dir, &svg_name, &field_svg(snap))?);
            }
        }
    }
    for (k, path) in run.trajectories.iter().enumerate() {
        files.push(write_file(
            dir,
            &trajectory_file_name(condition, k),
            &trajectory_csv(path),
        )?);
    }
    for (k, t) in run.tables.iter().enumerate() {
        for (name, q) in tables_of(condition, t) {
            files.push(write_file(
                dir,
                &table_file_name(condition, name, k),
                &q_table_csv(map, q),
            )?);
        }
    }
    Ok(files)
}

/// The tables a condition actually learns.
fn tables_of(condition: Condition, t: &AgentTables) -> Vec<(&'static str, &QTable)> {
    let mut out = vec![("q_mf", &t.q_mf)];
    if condition.model_based() {
        out.push(("q_mb", &t.q_mb));
    }
    if condition.pavlovian() {
        out.push(("q_pav", &t.pav.q));
    }
    out
}
