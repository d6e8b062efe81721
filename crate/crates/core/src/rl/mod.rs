//! Max-entropy policy training and the adapters that expose trained
//! networks through the black-box [`Policy`](crate::policy::Policy) interface.

pub mod checkpoint;
pub mod evaluate;
pub mod network;
pub mod replay;
pub mod train;

pub use checkpoint::PolicyCheckpoint;
pub use evaluate::{evaluate, EvalReport, SeedMetrics};
pub use network::{QNetwork, TdSample};
pub use replay::{Experience, ReplayBuffer};
pub use train::{train_soft_q, MetricsRow, SoftQLearner, TrainConfig, TrainOutcome};

use crate::error::Result;
use crate::mdp::softmax_policy;
use crate::policy::{Policy, PolicyOutput};

/// A trained network viewed as a black-box policy: Boltzmann distribution of
/// the Q-row at the training temperature, the Q-row itself, and the last
/// hidden layer as features.
#[derive(Debug, Clone)]
pub struct NetworkPolicy {
    network: QNetwork,
    alpha: f64,
    hash: String,
}

impl NetworkPolicy {
    /// Wraps an untracked network; the id hashes its parameters and temperature.
    pub fn new(network: QNetwork, alpha: f64) -> Self {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(alpha.to_le_bytes());
        for s in &network.sizes {
            h.update((*s as u64).to_le_bytes());
        }
        for p in network.params() {
            h.update(p.to_le_bytes());
        }
        Self { network, alpha, hash: hex::encode(h.finalize()) }
    }

    pub fn network(&self) -> &QNetwork {
        &self.network
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// Verifies the checkpoint's content hash and wraps it as a policy.
pub fn policy_from_checkpoint(ckpt: &PolicyCheckpoint) -> Result<NetworkPolicy> {
    ckpt.verify()?;
    Ok(NetworkPolicy { network: ckpt.network.clone(), alpha: ckpt.alpha(), hash: ckpt.hash.clone() })
}

impl Policy for NetworkPolicy {
    fn id(&self) -> String {
        self.hash.clone()
    }

    fn n_actions(&self) -> usize {
        self.network.output_dim()
    }

    fn evaluate(&self, observation: &[f64]) -> Result<PolicyOutput> {
        let (q, features) = self.network.forward_with_features(observation)?;
        Ok(PolicyOutput { distribution: softmax_policy(&q, self.alpha)?, q_row: Some(q), features: Some(features) })
    }
}
