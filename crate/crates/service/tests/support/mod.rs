#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use critstates::envs::EnvConfig;
use critstates::exposure::build_critical_deck;
use critstates::rl::{policy_from_checkpoint, NetworkPolicy, PolicyCheckpoint, QNetwork, TrainConfig};
use critstates::selection::PipelineConfig;
use critstates::Policy;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Untrained pong network wrapped as a checkpoint.
pub fn pong_checkpoint(seed: u64) -> PolicyCheckpoint {
    let env = EnvConfig::default_for("pong").unwrap();
    let probe = env.build(0).unwrap();
    let dim = probe.spec().observation_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = QNetwork::init(&[dim, 16, probe.n_actions()], &mut rng).unwrap();
    let grid = (0..probe.n_actions()).map(|a| a as f64).collect();
    let cfg = TrainConfig { hidden_layers: vec![16], seed, ..TrainConfig::default() };
    PolicyCheckpoint::new(env, grid, net, cfg, 0).unwrap()
}

pub fn pong_policy(seed: u64) -> Arc<NetworkPolicy> {
    Arc::new(policy_from_checkpoint(&pong_checkpoint(seed)).unwrap())
}

/// Writes one checkpoint and a small critical deck for it; returns (policy hash, deck id).
pub fn write_assets(dir: &Path) -> (String, String) {
    let ckpt = pong_checkpoint(5);
    ckpt.save(dir.join("pong.ckpt")).unwrap();
    let policy = policy_from_checkpoint(&ckpt).unwrap();
    let cfg = PipelineConfig { steps: 400, k: 3, restarts: 2, ..PipelineConfig::default() };
    let deck = build_critical_deck(&policy, ckpt.env.build(0).unwrap(), &cfg).unwrap();
    deck.write_dir(dir.join("decks").join("pong-critical")).unwrap();
    (policy.id(), deck.id)
}
