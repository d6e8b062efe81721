//! Black-box policy interface.
//!
//! Scoring, selection and the takeover service only ever see a [`Policy`]:
//! an observation goes in, an action distribution comes out, optionally with
//! the Q-row and hidden-layer features that produced it.

use crate::error::Result;
use crate::mdp::{ActionDistribution, TabularPolicy};

/// Everything a policy reports about one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub distribution: ActionDistribution,
    pub q_row: Option<Vec<f64>>,
    pub features: Option<Vec<f64>>,
}

pub trait Policy: Send + Sync {
    /// Stable identifier, normally the content hash of the backing checkpoint.
    fn id(&self) -> String;

    fn n_actions(&self) -> usize;

    fn evaluate(&self, observation: &[f64]) -> Result<PolicyOutput>;

    fn distribution(&self, observation: &[f64]) -> Result<ActionDistribution> {
        Ok(self.evaluate(observation)?.distribution)
    }

    fn q_row(&self, observation: &[f64]) -> Result<Option<Vec<f64>>> {
        Ok(self.evaluate(observation)?.q_row)
    }

    fn features(&self, observation: &[f64]) -> Result<Option<Vec<f64>>> {
        Ok(self.evaluate(observation)?.features)
    }
}

/// Acts uniformly at random; exposes neither Q-values nor features.
#[derive(Debug, Clone, Copy)]
pub struct UniformPolicy {
    pub n_actions: usize,
}

impl Policy for UniformPolicy {
    fn id(&self) -> String {
        format!("uniform-{}", self.n_actions)
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn evaluate(&self, _observation: &[f64]) -> Result<PolicyOutput> {
        Ok(PolicyOutput { distribution: ActionDistribution::uniform(self.n_actions), q_row: None, features: None })
    }
}

impl Policy for TabularPolicy {
    fn id(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(self.alpha.to_le_bytes());
        for x in self.q.iter().flatten() {
            hasher.update(x.to_le_bytes());
        }
        hex::encode(hasher.finalize())
    }

    fn n_actions(&self) -> usize {
        self.q.first().map_or(0, Vec::len)
    }

    /// Features fall back to the one-hot observation itself.
    fn evaluate(&self, observation: &[f64]) -> Result<PolicyOutput> {
        let s = self.state_of(observation)?;
        Ok(PolicyOutput {
            distribution: self.distributions[s].clone(),
            q_row: Some(self.q[s].clone()),
            features: Some(observation.to_vec()),
        })
    }
}
