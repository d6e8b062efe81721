//! Criticality scores for black-box policies.
//!
//! Both scores are oriented so that larger means more critical:
//!
//! * entropy-based: `ln |A| − H(π(·|s))`, so `H < t` becomes `score > ln |A| − t`;
//! * value-based: `max_a Q(s,a) − mean_a Q(s,a)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{entropy, ActionDistribution, TabularMdp};
use crate::policy::{Policy, PolicyOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalityMethod {
    EntropyBased,
    #[default]
    ValueBased,
}

impl std::fmt::Display for CriticalityMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CriticalityMethod::EntropyBased => "entropy_based",
            CriticalityMethod::ValueBased => "value_based",
        })
    }
}

impl std::str::FromStr for CriticalityMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entropy_based" | "entropy" => Ok(Self::EntropyBased),
            "value_based" | "value" => Ok(Self::ValueBased),
            other => Err(Error::InvalidInput(format!("unknown criticality method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalityScore {
    pub value: f64,
    pub method: CriticalityMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<usize>,
    pub distribution: ActionDistribution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_row: Option<Vec<f64>>,
}

/// Options for entropy scoring.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EntropyOptions {
    /// Drop the probability mass on the two extreme actions and renormalize
    /// before measuring entropy. Counters policies that pile mass on clipped
    /// boundary actions to inflate their entropy.
    #[serde(default)]
    pub exclude_boundary_actions: bool,
}

/// `ln n − H(p)` for a distribution.
pub fn entropy_score(dist: &ActionDistribution, opts: EntropyOptions) -> Result<f64> {
    let probs = dist.probabilities();
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvalidInput("degenerate action distribution".into()));
    }
    if opts.exclude_boundary_actions && probs.len() > 2 {
        let inner = &probs[1..probs.len() - 1];
        let mass: f64 = inner.iter().sum();
        if !(mass > 0.0) {
            return Err(Error::InvalidInput("no probability mass off the boundary actions".into()));
        }
        let renorm = ActionDistribution::new(inner.iter().map(|p| p / mass).collect())?;
        return Ok(((inner.len() as f64).ln() - entropy(&renorm)).max(0.0));
    }
    if probs.windows(2).all(|w| w[0] == w[1]) {
        return Ok(0.0);
    }
    Ok(((probs.len() as f64).ln() - entropy(dist)).max(0.0))
}

pub fn entropy_criticality(policy: &dyn Policy, observation: &[f64]) -> Result<CriticalityScore> {
    entropy_criticality_with(policy, observation, EntropyOptions::default())
}

pub fn entropy_criticality_with(
    policy: &dyn Policy,
    observation: &[f64],
    opts: EntropyOptions,
) -> Result<CriticalityScore> {
    let out = policy.evaluate(observation)?;
    let value = entropy_score(&out.distribution, opts)?;
    Ok(CriticalityScore {
        value,
        method: CriticalityMethod::EntropyBased,
        state: None,
        distribution: out.distribution,
        q_row: out.q_row,
    })
}

/// `max Q − mean Q` over one Q-row.
pub fn value_score(q_row: &[f64]) -> Result<f64> {
    if q_row.is_empty() {
        return Err(Error::InvalidInput("empty q-row".into()));
    }
    if q_row.iter().any(|q| !q.is_finite()) {
        return Err(Error::InvalidInput("q-row contains non-finite values".into()));
    }
    let max = q_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // subtracting the max first keeps the score exactly shift-invariant for constant rows
    let mean_gap = q_row.iter().map(|q| max - q).sum::<f64>() / q_row.len() as f64;
    Ok(mean_gap.max(0.0))
}

/// Value-based score for one Q-row; the distribution snapshot is the softmax of the row at `alpha`.
pub fn value_criticality(q_row: &[f64], alpha: f64) -> Result<CriticalityScore> {
    let value = value_score(q_row)?;
    Ok(CriticalityScore {
        value,
        method: CriticalityMethod::ValueBased,
        state: None,
        distribution: crate::mdp::softmax_policy(q_row, alpha)?,
        q_row: Some(q_row.to_vec()),
    })
}

/// Score of an already-evaluated policy output.
pub fn score_output(out: &PolicyOutput, method: CriticalityMethod, opts: EntropyOptions) -> Result<f64> {
    match method {
        CriticalityMethod::EntropyBased => entropy_score(&out.distribution, opts),
        CriticalityMethod::ValueBased => match &out.q_row {
            Some(q) => value_score(q),
            None => Err(Error::InvalidInput("policy exposes no Q-values for value-based scoring".into())),
        },
    }
}

/// Scores one observation with the requested method.
pub fn score_state(
    policy: &dyn Policy,
    observation: &[f64],
    method: CriticalityMethod,
    opts: EntropyOptions,
) -> Result<CriticalityScore> {
    match method {
        CriticalityMethod::EntropyBased => entropy_criticality_with(policy, observation, opts),
        CriticalityMethod::ValueBased => {
            let out = policy.evaluate(observation)?;
            let q_row = out.q_row.ok_or_else(|| {
                Error::InvalidInput(format!("policy {} exposes no Q-values for value-based scoring", policy.id()))
            })?;
            Ok(CriticalityScore {
                value: value_score(&q_row)?,
                method,
                state: None,
                distribution: out.distribution,
                q_row: Some(q_row),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    Absolute,
    Percentile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalityThreshold {
    pub mode: ThresholdMode,
    pub t: f64,
}

impl CriticalityThreshold {
    pub fn absolute(t: f64) -> Self {
        Self { mode: ThresholdMode::Absolute, t }
    }

    pub fn percentile(p: f64) -> Result<Self> {
        if !(0.0..=100.0).contains(&p) {
            return Err(Error::InvalidInput(format!("percentile {p} outside [0, 100]")));
        }
        Ok(Self { mode: ThresholdMode::Percentile, t: p })
    }
}

impl Default for CriticalityThreshold {
    fn default() -> Self {
        Self { mode: ThresholdMode::Percentile, t: 90.0 }
    }
}

/// Empirical percentile with linear interpolation between order statistics.
pub fn percentile(scores: &[f64], p: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("percentile of an empty score list".into()));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidInput(format!("percentile {p} outside [0, 100]")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

/// Turns a threshold into an absolute score cutoff.
pub fn resolve_threshold(scores: &[f64], thr: CriticalityThreshold) -> Result<f64> {
    match thr.mode {
        ThresholdMode::Absolute => Ok(thr.t),
        ThresholdMode::Percentile => percentile(scores, thr.t),
    }
}

/// Evenly spaced discretization of a continuous action interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionGrid {
    pub low: f64,
    pub high: f64,
    pub n: usize,
    pub points: Vec<f64>,
}

impl ActionGrid {
    pub fn spacing(&self) -> f64 {
        (self.high - self.low) / (self.n - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn value(&self, index: usize) -> Option<f64> {
        self.points.get(index).copied()
    }

    /// Index of the grid point nearest to `x`.
    /// Index of the closest grid point; exact ties go to the lower index.
    pub fn nearest(&self, x: f64) -> usize {
        let i = ((x - self.low) / self.spacing()).floor().clamp(0.0, (self.n - 1) as f64) as usize;
        if i + 1 < self.n && (self.points[i + 1] - x).abs() < (x - self.points[i]).abs() {
            i + 1
        } else {
            i
        }
    }
}

pub fn discretize(low: f64, high: f64, n: usize) -> Result<ActionGrid> {
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 grid points, got {n}")));
    }
    if !(low < high) || !low.is_finite() || !high.is_finite() {
        return Err(Error::InvalidInput(format!("invalid interval [{low}, {high}]")));
    }
    let step = (high - low) / (n - 1) as f64;
    // fill each half from its own endpoint so symmetric intervals give symmetric grids
    let points: Vec<f64> = (0..n)
        .map(|i| if 2 * i < n { low + i as f64 * step } else { high - (n - 1 - i) as f64 * step })
        .collect();
    Ok(ActionGrid { low, high, n, points })
}

/// One weighted outcome of simulating an action.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome<S> {
    pub weight: f64,
    pub next: S,
    pub reward: f64,
}

/// A simulator that can be queried one step ahead from an arbitrary state.
pub trait OneStepModel {
    type State;

    fn discount(&self) -> f64;

    fn n_actions(&self) -> usize;

    /// Outcomes of one simulation of `action` from `state`. Weights sum to 1;
    /// sampling models return a single outcome drawn with `sample` as seed.
    fn simulate(&self, state: &Self::State, action: usize, sample: u64) -> Result<Vec<Outcome<Self::State>>>;
}

impl OneStepModel for TabularMdp {
    type State = usize;

    fn discount(&self) -> f64 {
        self.discount
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Exact expectation over successors; `sample` is unused.
    fn simulate(&self, state: &usize, action: usize, _sample: u64) -> Result<Vec<Outcome<usize>>> {
        if *state >= self.n_states || action >= self.n_actions {
            return Err(Error::InvalidInput(format!("state {state} / action {action} out of range")));
        }
        Ok(self.transition[*state][action]
            .iter()
            .zip(&self.reward[*state][action])
            .enumerate()
            .filter(|(_, (p, _))| **p > 0.0)
            .map(|(next, (p, r))| Outcome { weight: *p, next, reward: *r })
            .collect())
    }
}

/// `q[a] = mean over `samples` simulations of E[r + γ·v(s')]`.
pub fn q_from_value_rollout<M: OneStepModel>(
    model: &M,
    value: impl Fn(&M::State) -> f64,
    state: &M::State,
    samples: usize,
) -> Result<Vec<f64>> {
    if samples == 0 {
        return Err(Error::InvalidInput("need at least one rollout sample".into()));
    }
    let gamma = model.discount();
    (0..model.n_actions())
        .map(|a| {
            let mut total = 0.0;
            for m in 0..samples {
                let outcomes = model.simulate(state, a, m as u64)?;
                total += outcomes.iter().map(|o| o.weight * (o.reward + gamma * value(&o.next))).sum::<f64>();
            }
            Ok(total / samples as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{soft_value_iteration, MaxEntConfig};
    use crate::policy::UniformPolicy;
    use proptest::prelude::*;

    struct Fixed(ActionDistribution);

    impl Policy for Fixed {
        fn id(&self) -> String {
            "fixed".into()
        }
        fn n_actions(&self) -> usize {
            self.0.len()
        }
        fn evaluate(&self, _: &[f64]) -> Result<crate::policy::PolicyOutput> {
            Ok(crate::policy::PolicyOutput { distribution: self.0.clone(), q_row: None, features: None })
        }
    }

    #[test]
    fn entropy_criticality_examples() {
        let s = entropy_criticality(&UniformPolicy { n_actions: 4 }, &[]).unwrap();
        assert_eq!(s.value, 0.0);
        let s = entropy_criticality(&Fixed(ActionDistribution::one_hot(4, 2)), &[]).unwrap();
        assert!((s.value - 4f64.ln()).abs() < 1e-12);
        let half = ActionDistribution::new(vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let s = entropy_criticality(&Fixed(half), &[]).unwrap();
        assert!((s.value - 2f64.ln()).abs() < 1e-12);
        assert!(s.value <= 4f64.ln() + 1e-9);
    }

    #[test]
    fn boundary_exclusion_changes_entropy_score() {
        let d = ActionDistribution::new(vec![0.45, 0.05, 0.05, 0.45]).unwrap();
        let plain = entropy_score(&d, EntropyOptions::default()).unwrap();
        let clipped = entropy_score(&d, EntropyOptions { exclude_boundary_actions: true }).unwrap();
        assert!(plain > 0.0);
        assert!(clipped.abs() < 1e-12);
    }

    #[test]
    fn value_criticality_examples() {
        for c in [-3.0, 0.0, 17.5] {
            assert_eq!(value_score(&[c, c, c]).unwrap(), 0.0);
        }
        assert_eq!(value_score(&[3.0, 0.0, 0.0]).unwrap(), 2.0);
        assert_eq!(value_score(&[103.0, 100.0, 100.0]).unwrap(), 2.0);
        assert!(value_score(&[]).is_err());
        assert!(value_criticality(&[1.0, f64::NAN], 0.1).is_err());
    }

    #[test]
    fn value_based_needs_q_row() {
        let err = score_state(&UniformPolicy { n_actions: 3 }, &[], CriticalityMethod::ValueBased, Default::default());
        assert!(err.is_err());
    }

    #[test]
    fn discretize_examples() {
        let g = discretize(-1.0, 1.0, 200).unwrap();
        assert_eq!(g.points[0], -1.0);
        assert_eq!(g.points[199], 1.0);
        assert_eq!(g.spacing(), 2.0 / 199.0);
        assert_eq!(discretize(-1.0, 1.0, 2).unwrap().points, vec![-1.0, 1.0]);
        assert_eq!(discretize(-1.0, 1.0, 3).unwrap().points, vec![-1.0, 0.0, 1.0]);
        assert!(discretize(-1.0, 1.0, 1).is_err());
        assert!(discretize(1.0, -1.0, 5).is_err());
        assert_eq!(g.nearest(0.0), 99);
        assert_eq!(g.nearest(-7.0), 0);
        assert!((0..200).all(|i| g.points[i] == -g.points[199 - i]));
    }

    #[test]
    fn threshold_examples() {
        let scores: Vec<f64> = (0..10).map(f64::from).collect();
        // order-statistic oracle: rank 0.9·9 = 8.1 lies between 8 and 9
        let oracle = 8.0 + 0.1 * (9.0 - 8.0);
        let got = resolve_threshold(&scores, CriticalityThreshold::percentile(90.0).unwrap()).unwrap();
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - 8.1).abs() < 1e-12);
        assert_eq!(resolve_threshold(&scores, CriticalityThreshold::absolute(0.5)).unwrap(), 0.5);
        assert_eq!(resolve_threshold(&[], CriticalityThreshold::absolute(0.5)).unwrap(), 0.5);
        assert_eq!(resolve_threshold(&[4.2], CriticalityThreshold::percentile(50.0).unwrap()).unwrap(), 4.2);
        assert!(resolve_threshold(&[], CriticalityThreshold::default()).is_err());
        assert!(CriticalityThreshold::percentile(101.0).is_err());
    }

    struct Line;

    // states 0..4 on a line; action 0 stays, action 1 moves right; reward = action
    impl OneStepModel for Line {
        type State = usize;
        fn discount(&self) -> f64 {
            0.5
        }
        fn n_actions(&self) -> usize {
            2
        }
        fn simulate(&self, s: &usize, a: usize, _: u64) -> Result<Vec<Outcome<usize>>> {
            if *s > 4 {
                return Err(Error::InvalidInput("off the line".into()));
            }
            Ok(vec![Outcome { weight: 1.0, next: (*s + a).min(4), reward: a as f64 }])
        }
    }

    #[test]
    fn rollout_q_with_zero_value_is_immediate_reward() {
        let q = q_from_value_rollout(&Line, |_| 0.0, &2, 1).unwrap();
        assert_eq!(q, vec![0.0, 1.0]);
        let q100 = q_from_value_rollout(&Line, |s| *s as f64, &2, 100).unwrap();
        let q1 = q_from_value_rollout(&Line, |s| *s as f64, &2, 1).unwrap();
        assert_eq!(q1, q100);
        assert!(q_from_value_rollout(&Line, |_| 0.0, &9, 1).is_err());
    }

    #[test]
    fn rollout_q_recovers_exact_soft_q() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mdp = TabularMdp::random(5, 3, 0.9, &mut rng).unwrap();
        let cfg = MaxEntConfig { tolerance: 1e-13, ..MaxEntConfig::with_alpha(0.7) };
        let (table, _) = soft_value_iteration(&mdp, &cfg).unwrap();
        for s in 0..5 {
            let q = q_from_value_rollout(&mdp, |sp| table.v[*sp], &s, 1).unwrap();
            for a in 0..3 {
                assert!((q[a] - table.q[s][a]).abs() < 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn value_score_shift_invariant(row in prop::collection::vec(-50i32..50, 1..12), c in -1000i32..1000) {
            // integer-valued rows keep the shift exact in floating point
            let q: Vec<f64> = row.iter().map(|x| f64::from(*x)).collect();
            let shifted: Vec<f64> = q.iter().map(|x| x + f64::from(c)).collect();
            prop_assert_eq!(value_score(&q).unwrap(), value_score(&shifted).unwrap());
        }

        #[test]
        fn entropy_score_permutation_invariant(w in prop::collection::vec(0.01f64..1.0, 2..10), rot in 0usize..10) {
            let total: f64 = w.iter().sum();
            let p: Vec<f64> = w.iter().map(|x| x / total).collect();
            let mut r = p.clone();
            r.rotate_left(rot % p.len());
            r.reverse();
            let a = entropy_score(&ActionDistribution::new(p).unwrap(), Default::default()).unwrap();
            let b = entropy_score(&ActionDistribution::new(r).unwrap(), Default::default()).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
