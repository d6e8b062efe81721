use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ActionSet, EnvSpec, Environment, Transition};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;
use crate::render::{Color, Entity, Scene};

/// Two-state chain used to check sampled learning against exact soft values.
///
/// In s0, action 0 moves to s1 for reward 1 and action 1 stays for 0.
/// In s1, action 0 returns to s0 for 0 and action 1 stays for 0.2.
pub fn chain_mdp() -> TabularMdp {
    TabularMdp::deterministic(&[vec![1, 0], vec![0, 1]], &[vec![1.0, 0.0], vec![0.0, 0.2]], 0.9)
        .expect("chain MDP is well formed")
}

/// Wraps a [`TabularMdp`] as an environment with one-hot observations.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    mdp: TabularMdp,
    name: &'static str,
    seed: u64,
    rng: ChaCha8Rng,
    state: usize,
    start: usize,
    step_limit: usize,
}

impl TabularEnv {
    pub fn new(mdp: TabularMdp, name: &'static str, start: usize, seed: u64) -> Self {
        Self { mdp, name, seed, rng: ChaCha8Rng::seed_from_u64(seed), state: start, start, step_limit: 200 }
    }

    pub fn chain(seed: u64) -> Self {
        Self::new(chain_mdp(), "chain", 0, seed)
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn one_hot(&self, s: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.mdp.n_states];
        v[s] = 1.0;
        v
    }
}

impl Environment for TabularEnv {
    fn name(&self) -> &'static str {
        self.name
    }

    fn spec(&self) -> EnvSpec {
        EnvSpec {
            observation_dim: self.mdp.n_states,
            action_set: ActionSet::Discrete { n: self.mdp.n_actions },
            step_limit: self.step_limit,
            seed: self.seed,
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.seed = seed;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = self.start;
        self.observation()
    }

    fn observation(&self) -> Vec<f64> {
        self.one_hot(self.state)
    }

    fn step(&mut self, action: usize) -> Result<Transition> {
        if action >= self.mdp.n_actions {
            return Err(Error::InvalidInput(format!("action {action} out of range")));
        }
        let probs = &self.mdp.transition[self.state][action];
        let u: f64 = self.rng.random();
        let mut acc = 0.0;
        let mut next = probs.iter().rposition(|p| *p > 0.0).unwrap_or(0);
        for (sp, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                next = sp;
                break;
            }
        }
        let reward = self.mdp.reward[self.state][action][next];
        self.state = next;
        Ok(Transition { observation: self.observation(), reward, done: false, crashed: false })
    }

    fn scene(&self) -> Scene {
        let n = self.mdp.n_states as f64;
        let entities = (0..self.mdp.n_states)
            .map(|s| {
                let color = if s == self.state { Color::EGO } else { Color::TRAFFIC };
                Entity::rect("state", s as f64 + 0.5, 0.5, 0.8, 0.8, 0.0, color)
            })
            .collect();
        Scene::new(self.name, (0.0, 0.5 - n / 2.0), (n, 0.5 + n / 2.0), entities)
    }

    fn state_json(&self) -> serde_json::Value {
        serde_json::json!({ "state": self.state })
    }

    /// No scripted rule exists for abstract MDPs.
    fn oracle_critical(&self) -> bool {
        false
    }

    fn clone_box(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}
