//! Max-entropy policy training, critical-state extraction and exposure artifacts.
//!
//! The crate is organised bottom-up:
//!
//! * [`mdp`]: finite MDPs and exact soft/hard Bellman computations;
//! * [`envs`]: seedable driving, Pong and tabular environments;
//! * [`rl`]: sampled soft Q-learning, checkpoints and evaluation;
//! * [`criticality`]: entropy- and value-based criticality scores;
//! * [`selection`]: rollout, top-fraction filter, k-means++ and representatives;
//! * [`exposure`]: critical/random decks, rollout recordings and deck edits.

pub mod criticality;
pub mod envs;
pub mod exposure;
pub mod error;
pub mod mdp;
pub mod policy;
pub mod render;
pub mod rl;
pub mod rollout;
pub mod selection;

pub use error::{Error, Result};
pub use policy::{Policy, PolicyOutput, UniformPolicy};
