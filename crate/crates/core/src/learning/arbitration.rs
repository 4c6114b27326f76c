use serde::{Deserialize, Serialize};

use super::{QTable, StateId, NUM_ACTIONS};

/// Running reliabilities of the model-free and model-based systems and the
/// resulting weight of the model-based values.
///
/// Each reliability is an exponential moving average of its prediction
/// error (|RPE| for model-free, SPE for model-based) and is rescaled by its
/// own running maximum before the two are contrasted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArbitrationState {
    pub rel_mf: f64,
    pub rel_mb: f64,
    pub max_mf: f64,
    pub max_mb: f64,
    pub p_mb: f64,
    pub ema_decay: f64,
    pub sharpness: f64,
}

impl ArbitrationState {
    pub fn new(ema_decay: f64, sharpness: f64) -> Self {
        Self {
            rel_mf: 0.0,
            rel_mb: 0.0,
            max_mf: 0.0,
            max_mb: 0.0,
            p_mb: 0.5,
            ema_decay,
            sharpness,
        }
    }

    fn normalized(rel: f64, max: f64) -> f64 {
        if max > 0.0 {
            rel / max
        } else {
            0.0
        }
    }

    pub fn normalized_mf(&self) -> f64 {
        Self::normalized(self.rel_mf, self.max_mf)
    }

    pub fn normalized_mb(&self) -> f64 {
        Self::normalized(self.rel_mb, self.max_mb)
    }
}

/// Folds one RPE and one SPE into the reliabilities and recomputes `p_mb`.
///
/// The system with the smaller normalized error gets the larger weight:
/// `p_mb = 1 / (1 + exp(sharpness * (n_mb - n_mf) / (n_mb + n_mf)))`,
/// and `0.5` when both normalized errors are zero.
pub fn arbitration_update(arb: &mut ArbitrationState, rpe: f64, spe: f64) {
    let d = arb.ema_decay;
    arb.rel_mf = (1.0 - d) * arb.rel_mf + d * rpe.abs();
    arb.rel_mb = (1.0 - d) * arb.rel_mb + d * spe.clamp(0.0, 1.0);
    arb.max_mf = arb.max_mf.max(arb.rel_mf);
    arb.max_mb = arb.max_mb.max(arb.rel_mb);
    let n_mf = arb.normalized_mf();
    let n_mb = arb.normalized_mb();
    let total = n_mf + n_mb;
    arb.p_mb = if total > 0.0 {
        1.0 / (1.0 + (arb.sharpness * (n_mb - n_mf) / total).exp())
    } else {
        0.5
    };
}

/// `p_mb * Q_mb(s, .) + (1 - p_mb) * Q_mf(s, .)`. Entries on which both
/// tables agree are passed through unchanged.
pub fn hybrid_q(q_mf: &QTable, q_mb: &QTable, p_mb: f64, s: StateId) -> [f64; NUM_ACTIONS] {
    let mut out = [0.0; NUM_ACTIONS];
    for (a, (&mf, &mb)) in q_mf.row(s).iter().zip(q_mb.row(s)).enumerate() {
        out[a] = if mf == mb {
            mf
        } else {
            p_mb * mb + (1.0 - p_mb) * mf
        };
    }
    out
}
