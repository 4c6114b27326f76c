use rand::Rng;

use super::{q_learning_update, QTable, StateId, NUM_ACTIONS};

/// Last observed outcome of a state-action pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelEntry {
    pub reward: f64,
    pub next: Option<StateId>,
}

/// Last-observation transition memory for Dyna-Q planning, plus visit
/// tallies per `(s, a)` and per `(s, a, s')` for state prediction errors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DynaModel {
    entries: Vec<Option<ModelEntry>>,
    counts: Vec<u32>,
    successor_counts: Vec<Vec<(Option<StateId>, u32)>>,
    seen: Vec<usize>,
}

impl DynaModel {
    pub fn new(num_states: usize) -> Self {
        let n = num_states * NUM_ACTIONS;
        Self {
            entries: vec![None; n],
            counts: vec![0; n],
            successor_counts: vec![Vec::new(); n],
            seen: Vec::new(),
        }
    }

    /// Number of distinct `(s, a)` pairs experienced.
    pub fn num_seen(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }

    pub fn entry(&self, s: StateId, a: usize) -> Option<ModelEntry> {
        self.entries[s * NUM_ACTIONS + a]
    }

    pub fn count(&self, s: StateId, a: usize) -> u32 {
        self.counts[s * NUM_ACTIONS + a]
    }

    pub fn successor_count(&self, s: StateId, a: usize, next: Option<StateId>) -> u32 {
        self.successor_counts[s * NUM_ACTIONS + a]
            .iter()
            .find(|(n, _)| *n == next)
            .map_or(0, |&(_, c)| c)
    }

    /// Experienced pairs in first-visit order.
    pub fn seen(&self) -> impl Iterator<Item = (StateId, usize)> + '_ {
        self.seen
            .iter()
            .map(|&i| (i / NUM_ACTIONS, i % NUM_ACTIONS))
    }
}

/// Records `(s, a) -> (r, s')`, overwriting any earlier outcome.
pub fn dyna_observe(m: &mut DynaModel, s: StateId, a: usize, r: f64, s_next: Option<StateId>) {
    let idx = s * NUM_ACTIONS + a;
    if m.entries[idx].is_none() {
        m.seen.push(idx);
    }
    m.entries[idx] = Some(ModelEntry {
        reward: r,
        next: s_next,
    });
    m.counts[idx] += 1;
    let succ = &mut m.successor_counts[idx];
    match succ.iter_mut().find(|(n, _)| *n == s_next) {
        Some((_, c)) => *c += 1,
        None => succ.push((s_next, 1)),
    }
}

/// Replays `k` remembered transitions, drawn uniformly from the experienced
/// pairs, through Q-learning. No-op on an empty model.
pub fn dyna_plan<R: Rng + ?Sized>(
    m: &DynaModel,
    q: &mut QTable,
    k: usize,
    alpha: f64,
    gamma: f64,
    rng: &mut R,
) {
    if m.seen.is_empty() {
        return;
    }
    for _ in 0..k {
        let idx = m.seen[rng.random_range(0..m.seen.len())];
        let e = m.entries[idx].expect("seen pairs have entries");
        q_learning_update(
            q,
            idx / NUM_ACTIONS,
            idx % NUM_ACTIONS,
            e.reward,
            e.next,
            alpha,
            gamma,
        );
    }
}

/// Surprise of observing `s_observed` after `(s, a)`: one minus the empirical
/// frequency of that successor, using counts before this observation.
/// Unseen pairs give 1.
pub fn state_prediction_error(
    m: &DynaModel,
    s: StateId,
    a: usize,
    s_observed: Option<StateId>,
) -> f64 {
    let total = m.count(s, a);
    if total == 0 {
        return 1.0;
    }
    1.0 - f64::from(m.successor_count(s, a, s_observed)) / f64::from(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn observe_grows_seen_once() {
        let mut m = DynaModel::new(4);
        dyna_observe(&mut m, 1, 2, 0.5, Some(2));
        assert_eq!(m.num_seen(), 1);
        dyna_observe(&mut m, 1, 2, -1.0, Some(3));
        assert_eq!(m.num_seen(), 1);
        assert_eq!(
            m.entry(1, 2),
            Some(ModelEntry {
                reward: -1.0,
                next: Some(3)
            })
        );
        assert_eq!(m.count(1, 2), 2);
        assert_eq!(m.successor_count(1, 2, Some(2)), 1);
        assert_eq!(m.successor_count(1, 2, Some(3)), 1);
    }

    #[test]
    fn empirical_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut m = DynaModel::new(3);
        for _ in 0..1000 {
            let next = if rng.random::<f64>() < 0.3 { 1 } else { 2 };
            dyna_observe(&mut m, 0, 0, 0.0, Some(next));
        }
        let f = f64::from(m.successor_count(0, 0, Some(1))) / f64::from(m.count(0, 0));
        assert!((f - 0.3).abs() < 0.05, "{f}");
    }

    #[test]
    fn planning_degenerate_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut q = QTable::new(3);
        let empty = DynaModel::new(3);
        dyna_plan(&empty, &mut q, 10, 0.5, 0.9, &mut rng);
        assert!(q.is_all_zero());

        let mut m = DynaModel::new(3);
        dyna_observe(&mut m, 0, 1, 1.0, Some(1));
        dyna_plan(&m, &mut q, 0, 0.5, 0.9, &mut rng);
        assert!(q.is_all_zero());
        dyna_plan(&m, &mut q, 1, 0.5, 0.9, &mut rng);
        assert_eq!(q.get(0, 1), 0.5);
    }

    #[test]
    fn spe_conventions() {
        let mut m = DynaModel::new(3);
        assert_eq!(state_prediction_error(&m, 0, 0, Some(1)), 1.0);
        dyna_observe(&mut m, 0, 0, 0.0, Some(1));
        assert_eq!(state_prediction_error(&m, 0, 0, Some(1)), 0.0);
        assert_eq!(state_prediction_error(&m, 0, 0, Some(2)), 1.0);
    }

    #[test]
    fn spe_of_fair_coin_transition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = DynaModel::new(3);
        for _ in 0..5000 {
            let next = if rng.random::<bool>() { 1 } else { 2 };
            dyna_observe(&mut m, 0, 0, 0.0, Some(next));
        }
        assert!((state_prediction_error(&m, 0, 0, Some(1)) - 0.5).abs() < 0.03);
        assert!((state_prediction_error(&m, 0, 0, Some(2)) - 0.5).abs() < 0.03);
    }
}
