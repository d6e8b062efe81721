//! Seedable simulation environments.

pub mod driving;
pub mod fixtures;
pub mod pong;
pub mod tabular;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::Scene;

pub use driving::{bicycle_step, DrivingAction, DrivingConfig, DrivingEnv, DrivingState, Neighbor, Pose};
pub use fixtures::{query_states, LabeledState, QueryState};
pub use pong::{PongAction, PongConfig, PongEnv, PongState};
pub use tabular::TabularEnv;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSet {
    Discrete { n: usize },
    /// Continuous interval, exposed to learners through a fixed grid of `n` points.
    Continuous { low: f64, high: f64, n: usize },
}

impl ActionSet {
    pub fn n_actions(&self) -> usize {
        match *self {
            ActionSet::Discrete { n } | ActionSet::Continuous { n, .. } => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub observation_dim: usize,
    pub action_set: ActionSet,
    pub step_limit: usize,
    pub seed: u64,
}

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// True terminal; the trainer does not bootstrap through it.
    pub done: bool,
    pub crashed: bool,
}

/// Common interface for every environment; actions are indices into the action set.
pub trait Environment: Send + Sync {
    fn name(&self) -> &'static str;

    fn spec(&self) -> EnvSpec;

    fn n_actions(&self) -> usize {
        self.spec().action_set.n_actions()
    }

    fn reset(&mut self, seed: u64) -> Vec<f64>;

    fn observation(&self) -> Vec<f64>;

    fn step(&mut self, action: usize) -> Result<Transition>;

    /// Entity layout for rendering and scene export.
    fn scene(&self) -> Scene;

    /// Environment-specific state snapshot (for logs and deck entries).
    fn state_json(&self) -> serde_json::Value;

    /// Scripted ground-truth criticality rule for the current state.
    fn oracle_critical(&self) -> bool;

    /// Human-readable label of an action index.
    fn action_label(&self, action: usize) -> String {
        action.to_string()
    }

    fn clone_box(&self) -> Box<dyn Environment>;
}

impl Clone for Box<dyn Environment> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

/// Per-environment configuration, as stored in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "env", rename_all = "snake_case")]
pub enum EnvConfig {
    Driving(DrivingConfig),
    Pong(PongConfig),
    Chain,
}

impl EnvConfig {
    pub fn default_for(name: &str) -> Result<Self> {
        match name {
            "driving" => Ok(EnvConfig::Driving(DrivingConfig::default())),
            "pong" => Ok(EnvConfig::Pong(PongConfig::default())),
            "chain" => Ok(EnvConfig::Chain),
            other => Err(Error::UnknownEnv(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::Driving(_) => "driving",
            EnvConfig::Pong(_) => "pong",
            EnvConfig::Chain => "chain",
        }
    }

    pub fn build(&self, seed: u64) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvConfig::Driving(cfg) => Box::new(DrivingEnv::new(cfg.clone(), seed)?),
            EnvConfig::Pong(cfg) => Box::new(PongEnv::new(cfg.clone(), seed)?),
            EnvConfig::Chain => Box::new(TabularEnv::chain(seed)),
        })
    }
}

/// Builds a registered environment with its default configuration.
pub fn make_env(name: &str, seed: u64) -> Result<Box<dyn Environment>> {
    EnvConfig::default_for(name)?.build(seed)
}

pub const ENV_NAMES: [&str; 3] = ["driving", "pong", "chain"];
