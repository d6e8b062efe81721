//! Finite MDPs, action distributions and exact soft/hard Bellman computations.
//!
//! Everything in here is a pure function of its inputs. The rest of the crate
//! uses these routines as ground truth when checking sampled or approximate
//! computations.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Finite MDP with explicit `P(s, a, s')` and `R(s, a, s')` tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTabularMdp")]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<Vec<f64>>>,
    pub discount: f64,
}

#[derive(Deserialize)]
struct RawTabularMdp {
    n_states: usize,
    n_actions: usize,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<Vec<f64>>>,
    discount: f64,
}

impl TryFrom<RawTabularMdp> for TabularMdp {
    type Error = Error;

    fn try_from(raw: RawTabularMdp) -> Result<Self> {
        TabularMdp::new(raw.n_states, raw.n_actions, raw.transition, raw.reward, raw.discount)
    }
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<Vec<f64>>>,
        discount: f64,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidInput("MDP needs at least one state and one action".into()));
        }
        if !(discount > 0.0 && discount <= 1.0) {
            return Err(Error::InvalidInput(format!("discount {discount} outside (0, 1]")));
        }
        let shape_ok = |t: &Vec<Vec<Vec<f64>>>| {
            t.len() == n_states
                && t.iter().all(|row| {
                    row.len() == n_actions && row.iter().all(|next| next.len() == n_states)
                })
        };
        if !shape_ok(&transition) || !shape_ok(&reward) {
            return Err(Error::InvalidInput(format!(
                "transition and reward must have shape ({n_states}, {n_actions}, {n_states})"
            )));
        }
        for (s, row) in transition.iter().enumerate() {
            for (a, probs) in row.iter().enumerate() {
                if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(Error::InvalidInput(format!("negative or non-finite P({s},{a},·)")));
                }
                let sum: f64 = probs.iter().sum();
                if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
                    return Err(Error::InvalidInput(format!("P({s},{a},·) sums to {sum}")));
                }
            }
        }
        if reward.iter().flatten().flatten().any(|r| !r.is_finite()) {
            return Err(Error::InvalidInput("reward contains non-finite values".into()));
        }
        Ok(Self { n_states, n_actions, transition, reward, discount })
    }

    /// Deterministic MDP from a successor table and per-(s, a) rewards.
    pub fn deterministic(next: &[Vec<usize>], reward: &[Vec<f64>], discount: f64) -> Result<Self> {
        let n_states = next.len();
        let n_actions = next.first().map_or(0, Vec::len);
        let mut transition = vec![vec![vec![0.0; n_states]; n_actions]; n_states];
        let mut rewards = vec![vec![vec![0.0; n_states]; n_actions]; n_states];
        for s in 0..n_states {
            if next[s].len() != n_actions || reward.get(s).map(Vec::len) != Some(n_actions) {
                return Err(Error::InvalidInput(format!("ragged row for state {s}")));
            }
            for a in 0..n_actions {
                let sp = next[s][a];
                if sp >= n_states {
                    return Err(Error::InvalidInput(format!("successor {sp} out of range")));
                }
                transition[s][a][sp] = 1.0;
                rewards[s][a][sp] = reward[s][a];
            }
        }
        Self::new(n_states, n_actions, transition, rewards, discount)
    }

    /// Random MDP with dense transition rows and rewards in [-1, 1].
    pub fn random(n_states: usize, n_actions: usize, discount: f64, rng: &mut impl Rng) -> Result<Self> {
        let mut transition = Vec::with_capacity(n_states);
        let mut reward = Vec::with_capacity(n_states);
        for _ in 0..n_states {
            let mut t_row = Vec::with_capacity(n_actions);
            let mut r_row = Vec::with_capacity(n_actions);
            for _ in 0..n_actions {
                let raw: Vec<f64> = (0..n_states).map(|_| rng.random::<f64>() + 1e-3).collect();
                let total: f64 = raw.iter().sum();
                let mut probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
                // fold rounding error into the last entry so the row sums to 1 tightly
                let head: f64 = probs[..n_states - 1].iter().sum();
                probs[n_states - 1] = 1.0 - head;
                t_row.push(probs);
                r_row.push((0..n_states).map(|_| rng.random_range(-1.0..=1.0)).collect());
            }
            transition.push(t_row);
            reward.push(r_row);
        }
        Self::new(n_states, n_actions, transition, reward, discount)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Expected immediate reward plus discounted successor value, `Σ P·(R + γ·v(s'))`.
    pub fn lookahead(&self, s: usize, a: usize, v: &[f64]) -> f64 {
        self.transition[s][a]
            .iter()
            .zip(&self.reward[s][a])
            .zip(v)
            .map(|((p, r), vs)| p * (r + self.discount * vs))
            .sum()
    }
}

/// A probability vector over a discrete action set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ActionDistribution(Vec<f64>);

impl ActionDistribution {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::InvalidInput("empty action distribution".into()));
        }
        if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidInput("probabilities must be finite and nonnegative".into()));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::NotNormalized { sum });
        }
        Ok(Self(probabilities))
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform distribution over zero actions");
        Self(vec![1.0 / n as f64; n])
    }

    pub fn one_hot(n: usize, index: usize) -> Self {
        let mut probs = vec![0.0; n];
        probs[index] = 1.0;
        Self(probs)
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the most probable action; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Inverse-CDF sample using one uniform draw.
    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.0.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // u landed in the rounding slack past the last cumulative sum
        self.0.iter().rposition(|p| *p > 0.0).unwrap_or(self.0.len() - 1)
    }
}

impl TryFrom<Vec<f64>> for ActionDistribution {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<ActionDistribution> for Vec<f64> {
    fn from(value: ActionDistribution) -> Self {
        value.0
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Shannon entropy in nats, with `0·ln 0 = 0`.
pub fn entropy(dist: &ActionDistribution) -> f64 {
    let h: f64 = dist.0.iter().filter(|p| **p > 0.0).map(|p| -p * p.ln()).sum();
    h.clamp(0.0, (dist.len() as f64).ln())
}

/// Max-shifted `ln Σ exp(x)`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `α·ln Σ_a exp(q_a/α)`, the soft maximum of a Q-row.
pub fn soft_value(q_row: &[f64], alpha: f64) -> f64 {
    let scaled: Vec<f64> = q_row.iter().map(|q| q / alpha).collect();
    alpha * log_sum_exp(&scaled)
}

/// Boltzmann policy `p_a ∝ exp(q_a/α)`.
pub fn softmax_policy(q_row: &[f64], alpha: f64) -> Result<ActionDistribution> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidInput(format!("temperature must be positive, got {alpha}")));
    }
    if q_row.is_empty() || q_row.iter().any(|q| !q.is_finite()) {
        return Err(Error::InvalidInput("q-row must be nonempty and finite".into()));
    }
    let max = q_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = q_row.iter().map(|q| ((q - max) / alpha).exp()).collect();
    let total: f64 = weights.iter().sum();
    Ok(ActionDistribution(weights.into_iter().map(|w| w / total).collect()))
}

/// Temperature and stopping rule for soft dynamic programming.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxEntConfig {
    pub alpha: f64,
    /// Overrides the MDP's own discount when set.
    #[serde(default)]
    pub discount: Option<f64>,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for MaxEntConfig {
    fn default() -> Self {
        Self { alpha: 1.0, discount: None, tolerance: 1e-8, max_iterations: 100_000 }
    }
}

impl MaxEntConfig {
    pub fn with_alpha(alpha: f64) -> Self {
        Self { alpha, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.tolerance > 0.0) {
            return Err(Error::InvalidInput("alpha and tolerance must be positive".into()));
        }
        if let Some(g) = self.discount {
            if !(g > 0.0 && g <= 1.0) {
                return Err(Error::InvalidInput(format!("discount {g} outside (0, 1]")));
            }
        }
        Ok(())
    }

    fn gamma(&self, mdp: &TabularMdp) -> f64 {
        self.discount.unwrap_or(mdp.discount)
    }
}

/// State values and action values of one policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub v: Vec<f64>,
    pub q: Vec<Vec<f64>>,
}

impl ValueTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self { v: vec![0.0; n_states], q: vec![vec![0.0; n_actions]; n_states] }
    }
}

fn sup_norm_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn check_q_shape(mdp: &TabularMdp, q: &[Vec<f64>]) -> Result<()> {
    if q.len() != mdp.n_states || q.iter().any(|row| row.len() != mdp.n_actions) {
        return Err(Error::InvalidInput("q table shape does not match MDP".into()));
    }
    if q.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("q table contains non-finite values".into()));
    }
    Ok(())
}

fn backup_with(
    mdp: &TabularMdp,
    gamma: f64,
    successor_value: impl Fn(usize) -> f64,
) -> Result<Vec<Vec<f64>>> {
    let v: Vec<f64> = (0..mdp.n_states).map(successor_value).collect();
    let mut out = vec![vec![0.0; mdp.n_actions]; mdp.n_states];
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let value: f64 = mdp.transition[s][a]
                .iter()
                .zip(&mdp.reward[s][a])
                .zip(&v)
                .map(|((p, r), vs)| p * (r + gamma * vs))
                .sum();
            if !value.is_finite() {
                return Err(Error::Numerical(format!("backup produced {value} at ({s},{a})")));
            }
            out[s][a] = value;
        }
    }
    Ok(out)
}

/// One application of the soft Bellman optimality operator.
pub fn soft_bellman_backup(mdp: &TabularMdp, q: &[Vec<f64>], cfg: &MaxEntConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    check_q_shape(mdp, q)?;
    backup_with(mdp, cfg.gamma(mdp), |s| soft_value(&q[s], cfg.alpha))
}

/// One application of the hard (max) Bellman optimality operator.
pub fn hard_bellman_backup(mdp: &TabularMdp, q: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    check_q_shape(mdp, q)?;
    backup_with(mdp, mdp.discount, |s| q[s].iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Soft on-policy evaluation backup for a fixed stochastic policy:
/// the successor value is `Σ_a π(a|s)·(Q(s,a) − α·ln π(a|s))`.
pub fn soft_policy_backup(
    mdp: &TabularMdp,
    q: &[Vec<f64>],
    policy: &[ActionDistribution],
    cfg: &MaxEntConfig,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    check_q_shape(mdp, q)?;
    if policy.len() != mdp.n_states || policy.iter().any(|d| d.len() != mdp.n_actions) {
        return Err(Error::InvalidInput("policy shape does not match MDP".into()));
    }
    backup_with(mdp, cfg.gamma(mdp), |s| {
        let pi = &policy[s];
        pi.probabilities()
            .iter()
            .zip(&q[s])
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, qv)| p * (qv - cfg.alpha * p.ln()))
            .sum()
    })
}

fn iterate_to_fixed_point(
    mdp: &TabularMdp,
    cfg: &MaxEntConfig,
    mut backup: impl FnMut(&[Vec<f64>]) -> Result<Vec<Vec<f64>>>,
) -> Result<Vec<Vec<f64>>> {
    let mut q = vec![vec![0.0; mdp.n_actions]; mdp.n_states];
    let mut change = f64::INFINITY;
    for _ in 0..cfg.max_iterations {
        let next = backup(&q)?;
        change = sup_norm_diff(&next, &q);
        q = next;
        if change < cfg.tolerance {
            return Ok(q);
        }
    }
    Err(Error::NotConverged { iterations: cfg.max_iterations, last_change: change })
}

/// Soft value iteration to a fixed point; returns soft values and the Boltzmann policy.
pub fn soft_value_iteration(mdp: &TabularMdp, cfg: &MaxEntConfig) -> Result<(ValueTable, TabularPolicy)> {
    cfg.validate()?;
    if cfg.gamma(mdp) >= 1.0 {
        return Err(Error::InvalidInput(
            "soft value iteration needs discount < 1; use soft_finite_horizon for undiscounted problems".into(),
        ));
    }
    let q = iterate_to_fixed_point(mdp, cfg, |q| soft_bellman_backup(mdp, q, cfg))?;
    let v = q.iter().map(|row| soft_value(row, cfg.alpha)).collect();
    let table = ValueTable { v, q };
    let policy = TabularPolicy::from_q(&table.q, cfg.alpha)?;
    Ok((table, policy))
}

/// `horizon` soft backups from zero; valid for any discount in (0, 1].
pub fn soft_finite_horizon(mdp: &TabularMdp, cfg: &MaxEntConfig, horizon: usize) -> Result<(ValueTable, TabularPolicy)> {
    cfg.validate()?;
    let mut q = vec![vec![0.0; mdp.n_actions]; mdp.n_states];
    for _ in 0..horizon {
        q = soft_bellman_backup(mdp, &q, cfg)?;
    }
    let v = q.iter().map(|row| soft_value(row, cfg.alpha)).collect();
    let table = ValueTable { v, q };
    let policy = TabularPolicy::from_q(&table.q, cfg.alpha)?;
    Ok((table, policy))
}

/// Classical value iteration with the max operator.
pub fn hard_value_iteration(mdp: &TabularMdp, cfg: &MaxEntConfig) -> Result<ValueTable> {
    if mdp.discount >= 1.0 {
        return Err(Error::InvalidInput("value iteration needs discount < 1".into()));
    }
    let q = iterate_to_fixed_point(mdp, cfg, |q| hard_bellman_backup(mdp, q))?;
    let v = q.iter().map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect();
    Ok(ValueTable { v, q })
}

/// Soft evaluation of a fixed policy; `v` holds the entropy-augmented state values.
pub fn soft_policy_evaluation(
    mdp: &TabularMdp,
    policy: &[ActionDistribution],
    cfg: &MaxEntConfig,
) -> Result<ValueTable> {
    cfg.validate()?;
    let q = iterate_to_fixed_point(mdp, cfg, |q| soft_policy_backup(mdp, q, policy, cfg))?;
    let v = (0..mdp.n_states)
        .map(|s| {
            policy[s]
                .probabilities()
                .iter()
                .zip(&q[s])
                .filter(|(p, _)| **p > 0.0)
                .map(|(p, qv)| p * (qv - cfg.alpha * p.ln()))
                .sum()
        })
        .collect();
    Ok(ValueTable { v, q })
}

/// Max-entropy policy over a finite state set; observations are one-hot state encodings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub alpha: f64,
    pub q: Vec<Vec<f64>>,
    pub distributions: Vec<ActionDistribution>,
}

impl TabularPolicy {
    pub fn from_q(q: &[Vec<f64>], alpha: f64) -> Result<Self> {
        let distributions = q.iter().map(|row| softmax_policy(row, alpha)).collect::<Result<_>>()?;
        Ok(Self { alpha, q: q.to_vec(), distributions })
    }

    pub fn n_states(&self) -> usize {
        self.q.len()
    }

    /// Index of the hot entry of a one-hot observation.
    pub fn state_of(&self, observation: &[f64]) -> Result<usize> {
        if observation.len() != self.n_states() {
            return Err(Error::InvalidInput(format!(
                "tabular policy expects one-hot of length {}, got {}",
                self.n_states(),
                observation.len()
            )));
        }
        Ok(argmax(observation))
    }
}

/// One recorded environment step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub observation: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed: u64,
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.steps.iter().position(|s| !s.reward.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite reward at step {i}")));
        }
        // a terminal step may only appear last
        if let Some(i) = self.steps.iter().position(|s| s.done) {
            if i + 1 != self.steps.len() {
                return Err(Error::InvalidInput(format!("step {i} is terminal but has a successor")));
            }
        }
        Ok(())
    }
}

/// `Σ_t γ^t r_t`.
pub fn discounted_return(traj: &Trajectory, gamma: f64) -> Result<f64> {
    traj.validate()?;
    let mut total = 0.0;
    let mut weight = 1.0;
    for step in &traj.steps {
        total += weight * step.reward;
        weight *= gamma;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn entropy_examples() {
        assert_close(entropy(&ActionDistribution::uniform(4)), 4f64.ln(), 1e-12);
        assert_close(entropy(&ActionDistribution::uniform(4)), 1.386294, 1e-6);
        assert_eq!(entropy(&ActionDistribution::one_hot(7, 3)), 0.0);
        let d = ActionDistribution::new(vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        assert_close(entropy(&d), std::f64::consts::LN_2, 1e-12);
    }

    #[test]
    fn rejects_unnormalized_distribution() {
        assert!(matches!(ActionDistribution::new(vec![0.5, 0.6]), Err(Error::NotNormalized { .. })));
        assert!(ActionDistribution::new(vec![-0.1, 1.1]).is_err());
        assert!(ActionDistribution::new(vec![]).is_err());
    }

    #[test]
    fn single_action_backup_and_fixed_point() {
        let mdp = TabularMdp::deterministic(&[vec![0]], &[vec![1.0]], 0.5).unwrap();
        for alpha in [0.01, 1.0, 10.0] {
            let cfg = MaxEntConfig::with_alpha(alpha);
            let q1 = soft_bellman_backup(&mdp, &[vec![0.0]], &cfg).unwrap();
            assert_close(q1[0][0], 1.0, 1e-15);
            let (table, _) = soft_value_iteration(&mdp, &cfg).unwrap();
            assert_close(table.q[0][0], 2.0, 1e-7);
        }
    }

    #[test]
    fn two_symmetric_actions_closed_form() {
        let mdp = TabularMdp::deterministic(&[vec![0, 0]], &[vec![0.0, 0.0]], 0.9).unwrap();
        let cfg = MaxEntConfig { tolerance: 1e-12, ..MaxEntConfig::with_alpha(1.0) };
        let (table, policy) = soft_value_iteration(&mdp, &cfg).unwrap();
        assert_close(table.v[0], 2f64.ln() / 0.1, 1e-9);
        assert_close(table.v[0], 6.931472, 1e-6);
        assert_eq!(policy.distributions[0].probabilities(), &[0.5, 0.5]);
    }

    #[test]
    fn low_temperature_chain_is_nearly_greedy() {
        // s0: a0 -> s1 with reward 1, a1 -> s1 with reward 0; s1 absorbs with zero reward
        let mdp = TabularMdp::deterministic(&[vec![1, 1], vec![1, 1]], &[vec![1.0, 0.0], vec![0.0, 0.0]], 0.9)
            .unwrap();
        let (table, policy) = soft_value_iteration(&mdp, &MaxEntConfig::with_alpha(0.01)).unwrap();
        let gap = table.q[0][0] - table.q[0][1];
        assert_close(gap, 1.0, 1e-9);
        let p = policy.distributions[0].probabilities()[0];
        // independent evaluation of the two-way softmax
        let direct = 1.0 / (1.0 + (-gap / 0.01f64).exp());
        assert_close(p, direct, 1e-12);
        assert!(p > 0.99);
    }

    #[test]
    fn policy_is_boltzmann_in_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mdp = TabularMdp::random(5, 3, 0.9, &mut rng).unwrap();
        let cfg = MaxEntConfig::with_alpha(0.5);
        let (table, policy) = soft_value_iteration(&mdp, &cfg).unwrap();
        for s in 0..5 {
            let z: f64 = table.q[s].iter().map(|q| (q / 0.5).exp()).sum();
            for a in 0..3 {
                assert_close(policy.distributions[s].probabilities()[a], (table.q[s][a] / 0.5).exp() / z, 1e-9);
            }
            assert_close(table.v[s], soft_value(&table.q[s], 0.5), 1e-9);
        }
        let again = soft_bellman_backup(&mdp, &table.q, &cfg).unwrap();
        assert!(sup_norm_diff(&again, &table.q) < cfg.tolerance);
    }

    #[test]
    fn undiscounted_needs_finite_horizon() {
        let mdp = TabularMdp::deterministic(&[vec![0]], &[vec![1.0]], 1.0).unwrap();
        assert!(soft_value_iteration(&mdp, &MaxEntConfig::default()).is_err());
        let (table, _) = soft_finite_horizon(&mdp, &MaxEntConfig::default(), 5).unwrap();
        assert_close(table.q[0][0], 5.0, 1e-12);
    }

    #[test]
    fn non_convergence_is_reported() {
        let mdp = TabularMdp::deterministic(&[vec![0]], &[vec![1.0]], 0.99).unwrap();
        let cfg = MaxEntConfig { max_iterations: 3, ..MaxEntConfig::default() };
        assert!(matches!(soft_value_iteration(&mdp, &cfg), Err(Error::NotConverged { iterations: 3, .. })));
    }

    #[test]
    fn overflowing_backup_is_an_error() {
        let mdp = TabularMdp::deterministic(&[vec![0]], &[vec![f64::MAX]], 0.9).unwrap();
        let q = vec![vec![f64::MAX]];
        assert!(matches!(soft_bellman_backup(&mdp, &q, &MaxEntConfig::default()), Err(Error::Numerical(_))));
    }

    #[test]
    fn soft_policy_evaluation_of_optimal_policy_matches_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mdp = TabularMdp::random(4, 2, 0.8, &mut rng).unwrap();
        let cfg = MaxEntConfig::with_alpha(0.3);
        let (opt, policy) = soft_value_iteration(&mdp, &cfg).unwrap();
        let eval = soft_policy_evaluation(&mdp, &policy.distributions, &cfg).unwrap();
        for s in 0..4 {
            assert_close(eval.v[s], opt.v[s], 1e-6);
        }
    }

    #[test]
    fn hard_value_iteration_dominates_any_greedy_lookahead() {
        let mdp = TabularMdp::deterministic(&[vec![1, 0], vec![1, 0]], &[vec![0.0, 0.2], vec![1.0, 0.0]], 0.5)
            .unwrap();
        let table = hard_value_iteration(&mdp, &MaxEntConfig::default()).unwrap();
        // s1 loops with reward 1: V(s1) = 2; s0 moves to s1: V(s0) = 0 + 0.5·2
        assert_close(table.v[1], 2.0, 1e-7);
        assert_close(table.v[0], 1.0, 1e-7);
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_policy(&[1.0, 1.0], 1.0).unwrap().probabilities(), &[0.5, 0.5]);
        let p = softmax_policy(&[1.0, 0.0], 1.0).unwrap();
        let e = std::f64::consts::E;
        assert_close(p.probabilities()[0], e / (e + 1.0), 1e-15);
        assert_close(p.probabilities()[0], 0.731059, 1e-6);
        assert_close(p.probabilities()[1], 0.268941, 1e-6);
        assert_eq!(softmax_policy(&[11.0, 10.0], 1.0).unwrap(), p);
        assert!(softmax_policy(&[1.0], 0.0).is_err());
        assert!(softmax_policy(&[1.0], -1.0).is_err());
    }

    #[test]
    fn discounted_return_examples() {
        let traj = |rs: &[f64]| Trajectory {
            seed: 0,
            steps: rs
                .iter()
                .map(|r| TrajectoryStep { observation: vec![], action: 0, reward: *r, done: false })
                .collect(),
        };
        assert_close(discounted_return(&traj(&[1.0, 1.0, 1.0]), 0.5).unwrap(), 1.75, 1e-15);
        assert_eq!(discounted_return(&traj(&[]), 0.9).unwrap(), 0.0);
        assert_close(discounted_return(&traj(&[0.0, 0.0, 5.0]), 0.9).unwrap(), 4.05, 1e-12);
        let mut bad = traj(&[1.0, 1.0]);
        bad.steps[0].done = true;
        assert!(discounted_return(&bad, 0.9).is_err());
    }

    #[test]
    fn mdp_validation() {
        assert!(TabularMdp::new(1, 1, vec![vec![vec![0.5]]], vec![vec![vec![0.0]]], 0.9).is_err());
        assert!(TabularMdp::new(1, 1, vec![vec![vec![1.0]]], vec![vec![vec![f64::NAN]]], 0.9).is_err());
        assert!(TabularMdp::new(1, 1, vec![vec![vec![1.0]]], vec![vec![vec![0.0]]], 0.0).is_err());
        let json = r#"{"n_states":1,"n_actions":1,"transition":[[[0.7]]],"reward":[[[0]]],"discount":0.5}"#;
        assert!(TabularMdp::from_json(json).is_err());
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mdp = TabularMdp::random(3, 2, 0.97, &mut rng).unwrap();
        let back = TabularMdp::from_json(&mdp.to_json().unwrap()).unwrap();
        assert_eq!(mdp, back);
    }
}
