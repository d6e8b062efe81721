//! Seeded on-policy rollouts shared by evaluation, state collection,
//! recordings and supervised sessions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::envs::{Environment, Transition};
use crate::error::{Error, Result};
use crate::mdp::{Trajectory, TrajectoryStep};
use crate::policy::{Policy, PolicyOutput};

/// SplitMix64 mix of a base seed and a stream index.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const ACTION_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone)]
pub struct DriverStep {
    pub step_index: u64,
    /// Observation the action was chosen in.
    pub observation: Vec<f64>,
    pub output: PolicyOutput,
    pub policy_action: usize,
    pub applied_action: usize,
    pub transition: Transition,
    /// The environment was reset after this step.
    pub episode_ended: bool,
}

/// Drives one environment with a policy. Episode `k` resets with
/// `derive_seed(seed, k)`; actions come from a separate seeded stream that
/// advances exactly once per step, whoever is in control.
#[derive(Clone)]
pub struct RolloutDriver {
    env: Box<dyn Environment>,
    rng: ChaCha8Rng,
    seed: u64,
    episode: u64,
    episode_steps: usize,
    step_index: u64,
}

impl RolloutDriver {
    pub fn new(mut env: Box<dyn Environment>, seed: u64) -> Self {
        env.reset(derive_seed(seed, 0));
        Self::resume(env, seed)
    }

    /// Starts from the environment's current state instead of resetting it.
    pub fn resume(env: Box<dyn Environment>, seed: u64) -> Self {
        Self {
            env,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, ACTION_STREAM)),
            seed,
            episode: 0,
            episode_steps: 0,
            step_index: 0,
        }
    }

    pub fn env(&self) -> &dyn Environment {
        self.env.as_ref()
    }

    pub fn step_index(&self) -> u64 {
        self.step_index
    }

    pub fn observation(&self) -> Vec<f64> {
        self.env.observation()
    }

    pub fn step(&mut self, policy: &dyn Policy, action_override: Option<usize>) -> Result<DriverStep> {
        if let Some(a) = action_override.filter(|a| *a >= self.env.n_actions()) {
            return Err(Error::InvalidInput(format!("action {a} outside the action set of {}", self.env.n_actions())));
        }
        let observation = self.env.observation();
        let output = policy.evaluate(&observation)?;
        let policy_action = output.distribution.sample(&mut self.rng);
        let applied_action = action_override.unwrap_or(policy_action);
        let transition = self.env.step(applied_action)?;
        self.episode_steps += 1;
        let step_index = self.step_index;
        self.step_index += 1;
        let episode_ended = transition.done || self.episode_steps >= self.env.spec().step_limit;
        if episode_ended {
            self.episode += 1;
            self.episode_steps = 0;
            self.env.reset(derive_seed(self.seed, self.episode));
        }
        Ok(DriverStep { step_index, observation, output, policy_action, applied_action, transition, episode_ended })
    }
}

/// Offline rollout of `n_steps` policy-controlled steps.
pub fn rollout(env: Box<dyn Environment>, policy: &dyn Policy, seed: u64, n_steps: usize) -> Result<Trajectory> {
    let mut driver = RolloutDriver::new(env, seed);
    let mut steps = Vec::with_capacity(n_steps);
    for _ in 0..n_steps {
        let s = driver.step(policy, None)?;
        steps.push(TrajectoryStep {
            observation: s.observation,
            action: s.applied_action,
            reward: s.transition.reward,
            done: s.transition.done,
        });
    }
    Ok(Trajectory { seed, steps })
}
