//! Sampled soft Q-learning with a replay buffer and a periodically synced target network.
//!
//! One iteration is one environment step followed by one gradient step. The
//! behaviour policy is the Boltzmann policy of the online network at the
//! training temperature, and regression targets are one-step soft backups
//! `r + γ·α·ln Σ_a' exp(Q_target(s', a')/α)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::PolicyCheckpoint;
use super::network::{QNetwork, TdSample};
use super::replay::{Experience, ReplayBuffer};
use crate::criticality::discretize;
use crate::envs::{ActionSet, EnvConfig, Environment};
use crate::error::{Error, Result};
use crate::mdp::{soft_value, softmax_policy};
use crate::rollout::derive_seed;

const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub alpha: f64,
    pub discount: f64,
    pub replay_capacity: usize,
    pub target_update_period: u64,
    pub seed: u64,
    pub hidden_layers: Vec<usize>,
    /// Gradient steps begin once the buffer holds this many transitions.
    pub learning_starts: usize,
    pub log_every: u64,
    /// Number of Legendre coefficients behind the output layer, for action
    /// grids; `None` gives one independent output unit per action.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action_basis: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            batch_size: 32,
            learning_rate: 1e-3,
            alpha: 0.1,
            discount: 0.95,
            replay_capacity: 50_000,
            target_update_period: 250,
            seed: 0,
            hidden_layers: vec![64, 64],
            learning_starts: 500,
            log_every: 1000,
            action_basis: None,
        }
    }
}

impl TrainConfig {
    /// Bundled per-environment settings.
    pub fn for_env(name: &str) -> Result<Self> {
        let base = Self::default();
        match name {
            "driving" => Ok(Self {
                learning_rate: 1e-2,
                target_update_period: 100,
                learning_starts: 200,
                action_basis: Some(8),
                ..base
            }),
            "pong" => Ok(Self { discount: 0.97, ..base }),
            "chain" => Ok(Self {
                iterations: 20_000,
                discount: 0.9,
                hidden_layers: vec![16],
                learning_rate: 0.05,
                learning_starts: 100,
                replay_capacity: 5_000,
                target_update_period: 100,
                ..base
            }),
            other => Err(Error::UnknownEnv(other.to_string())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.iterations > 0
            && self.batch_size > 0
            && self.learning_rate > 0.0
            && self.alpha > 0.0
            && self.discount > 0.0
            && self.discount <= 1.0
            && self.replay_capacity > 0
            && self.target_update_period > 0
            && self.log_every > 0
            && !self.hidden_layers.contains(&0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid training config {self:?}")))
        }
    }
}

/// Online and target networks plus the soft TD update rule.
#[derive(Debug, Clone)]
pub struct SoftQLearner {
    pub online: QNetwork,
    pub target: QNetwork,
    pub alpha: f64,
    pub discount: f64,
    pub learning_rate: f64,
}

impl SoftQLearner {
    pub fn new(network: QNetwork, cfg: &TrainConfig) -> Self {
        Self {
            target: network.clone(),
            online: network,
            alpha: cfg.alpha,
            discount: cfg.discount,
            learning_rate: cfg.learning_rate,
        }
    }

    /// Soft one-step targets computed with the frozen target network.
    pub fn targets(&self, batch: &[&Experience]) -> Result<Vec<f64>> {
        batch
            .iter()
            .map(|e| {
                if e.done {
                    return Ok(e.reward);
                }
                let q_next = self.target.forward(&e.next_observation)?;
                Ok(e.reward + self.discount * soft_value(&q_next, self.alpha))
            })
            .collect()
    }

    /// One gradient step on a batch; returns the TD loss before the step.
    pub fn update(&mut self, batch: &[&Experience]) -> Result<f64> {
        let targets = self.targets(batch)?;
        let samples: Vec<TdSample> = batch
            .iter()
            .zip(&targets)
            .map(|(e, t)| TdSample { observation: &e.observation, action: e.action, target: *t })
            .collect();
        let lg = self.online.td_loss_gradient(&samples)?;
        self.online.sgd_step(&lg.gradient, self.learning_rate);
        Ok(lg.loss)
    }

    pub fn sync_target(&mut self) {
        self.target = self.online.clone();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: u64,
    pub average_reward: f64,
    pub crash_rate: f64,
    pub td_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: PolicyCheckpoint,
    pub metrics: Vec<MetricsRow>,
}

pub fn action_values(set: &ActionSet) -> Result<Vec<f64>> {
    match *set {
        ActionSet::Discrete { n } => Ok((0..n).map(|i| i as f64).collect()),
        ActionSet::Continuous { low, high, n } => Ok(discretize(low, high, n)?.points),
    }
}

/// Trains a soft Q-network on the configured environment.
pub fn train_soft_q(env_cfg: &EnvConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut env = env_cfg.build(derive_seed(cfg.seed, 0))?;
    let spec = env.spec();
    let mut sizes = vec![spec.observation_dim];
    sizes.extend(&cfg.hidden_layers);
    sizes.push(spec.action_set.n_actions());

    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, u64::MAX - 1));
    let network = QNetwork::init_with_basis(&sizes, cfg.action_basis, &mut init_rng)?;
    let mut learner = SoftQLearner::new(network, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, u64::MAX));
    let mut replay = ReplayBuffer::new(cfg.replay_capacity);

    let mut observation = env.observation();
    let mut episode = 0u64;
    let mut episode_steps = 0usize;
    let mut metrics = Vec::new();
    let (mut win_reward, mut win_crashes, mut win_loss, mut win_updates) = (0.0, 0u64, 0.0, 0u64);
    let mut win_steps = 0u64;

    for it in 1..=cfg.iterations {
        let q = learner.online.forward(&observation)?;
        let action = softmax_policy(&q, cfg.alpha)?.sample(&mut rng);
        let t = env.step(action)?;
        episode_steps += 1;
        win_reward += t.reward;
        win_crashes += u64::from(t.crashed);
        win_steps += 1;
        replay.push(Experience {
            observation: std::mem::take(&mut observation),
            action,
            reward: t.reward,
            next_observation: t.observation.clone(),
            done: t.done,
        });
        observation = if t.done || episode_steps >= spec.step_limit {
            episode += 1;
            episode_steps = 0;
            env.reset(derive_seed(cfg.seed, episode))
        } else {
            t.observation
        };

        if replay.len() >= cfg.learning_starts.max(cfg.batch_size) {
            let batch = replay.sample(&mut rng, cfg.batch_size);
            let loss = learner.update(&batch)?;
            if !loss.is_finite() || loss > DIVERGENCE_LOSS {
                return Err(Error::Diverged { iteration: it, reason: format!("TD loss {loss:e}") });
            }
            if !learner.online.all_finite() {
                return Err(Error::Diverged { iteration: it, reason: "non-finite parameters".into() });
            }
            win_loss += loss;
            win_updates += 1;
        }
        if it % cfg.target_update_period == 0 {
            learner.sync_target();
        }
        if it % cfg.log_every == 0 || it == cfg.iterations {
            let row = MetricsRow {
                iteration: it,
                average_reward: win_reward / win_steps as f64,
                crash_rate: win_crashes as f64 / win_steps as f64,
                td_loss: if win_updates > 0 { win_loss / win_updates as f64 } else { 0.0 },
            };
            log::info!(
                "iter {:>6}  reward/step {:+.4}  crashes/step {:.4}  td loss {:.5}",
                row.iteration,
                row.average_reward,
                row.crash_rate,
                row.td_loss
            );
            metrics.push(row);
            (win_reward, win_crashes, win_loss, win_updates, win_steps) = (0.0, 0, 0.0, 0, 0);
        }
    }

    let grid = action_values(&spec.action_set)?;
    let checkpoint = PolicyCheckpoint::new(env_cfg.clone(), grid, learner.online, cfg.clone(), cfg.iterations)?;
    Ok(TrainOutcome { checkpoint, metrics })
}

/// Environment an evaluator or deck builder should use for a checkpoint.
pub fn env_for_checkpoint(ckpt: &PolicyCheckpoint, seed: u64) -> Result<Box<dyn Environment>> {
    ckpt.env.build(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::tabular::chain_mdp;
    use crate::mdp::{soft_value_iteration, MaxEntConfig};

    fn tiny_batch() -> Vec<Experience> {
        (0..4)
            .map(|i| Experience {
                observation: vec![i as f64 * 0.1, 1.0 - i as f64 * 0.2],
                action: i % 3,
                reward: i as f64,
                next_observation: vec![0.3, -0.1 * i as f64],
                done: i == 3,
            })
            .collect()
    }

    #[test]
    fn targets_are_frozen_between_syncs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = TrainConfig { learning_rate: 0.05, ..TrainConfig::default() };
        let mut learner = SoftQLearner::new(QNetwork::init(&[2, 4, 3], &mut rng).unwrap(), &cfg);
        let batch = tiny_batch();
        let refs: Vec<&Experience> = batch.iter().collect();
        let frozen = learner.targets(&refs).unwrap();
        for _ in 0..20 {
            learner.update(&refs).unwrap();
            assert_eq!(learner.targets(&refs).unwrap(), frozen);
        }
        learner.sync_target();
        assert_ne!(learner.targets(&refs).unwrap(), frozen);
        // terminal transitions never bootstrap
        assert_eq!(learner.targets(&refs).unwrap()[3], 3.0);
    }

    #[test]
    fn identical_config_gives_identical_hash() {
        let cfg = TrainConfig { iterations: 600, learning_starts: 64, ..TrainConfig::for_env("pong").unwrap() };
        let env = EnvConfig::default_for("pong").unwrap();
        let a = train_soft_q(&env, &cfg).unwrap();
        let b = train_soft_q(&env, &cfg).unwrap();
        assert_eq!(a.checkpoint.hash, b.checkpoint.hash);
        let c = train_soft_q(&env, &TrainConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.checkpoint.hash, c.checkpoint.hash);
        assert_eq!(a.metrics.len(), 1);
    }

    #[test]
    fn divergence_is_detected() {
        let cfg = TrainConfig { learning_rate: 1e3, ..TrainConfig::for_env("chain").unwrap() };
        let err = train_soft_q(&EnvConfig::Chain, &cfg).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn chain_learning_matches_exact_soft_q() {
        let cfg = TrainConfig::for_env("chain").unwrap();
        assert!(cfg.iterations <= 20_000);
        let out = train_soft_q(&EnvConfig::Chain, &cfg).unwrap();
        let mdp = chain_mdp();
        let (exact, exact_policy) = soft_value_iteration(&mdp, &MaxEntConfig::with_alpha(cfg.alpha)).unwrap();
        let mut worst: f64 = 0.0;
        for s in 0..mdp.n_states {
            let mut obs = vec![0.0; mdp.n_states];
            obs[s] = 1.0;
            let q = out.checkpoint.network.forward(&obs).unwrap();
            for a in 0..mdp.n_actions {
                worst = worst.max((q[a] - exact.q[s][a]).abs());
            }
            let greedy = crate::mdp::argmax(&q);
            assert_eq!(greedy, exact_policy.distributions[s].argmax());
        }
        eprintln!("chain sup-norm error {worst}");
        assert!(worst < 0.05, "sup-norm error {worst}");
    }
}
