use serde::{Deserialize, Serialize};

use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::mdp::entropy;
use crate::policy::Policy;
use crate::rollout::RolloutDriver;

pub const ENTROPY_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub steps: usize,
    pub return_per_step: f64,
    pub crashes: u64,
    pub crashes_per_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub per_seed: Vec<SeedMetrics>,
    pub mean_return_per_step: f64,
    pub stderr_return_per_step: f64,
    pub mean_crashes_per_step: f64,
    pub stderr_crashes_per_step: f64,
    /// Counts of per-step policy entropy over `ENTROPY_BINS` equal bins of `[0, ln |A|]`.
    pub entropy_histogram: Vec<u64>,
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Runs `n_steps` on-policy steps for each seed.
pub fn evaluate(policy: &dyn Policy, env_cfg: &EnvConfig, n_steps: usize, seeds: &[u64]) -> Result<EvalReport> {
    if n_steps == 0 {
        return Err(Error::InvalidInput("evaluation needs at least one step".into()));
    }
    if seeds.is_empty() {
        return Err(Error::InvalidInput("evaluation needs at least one seed".into()));
    }
    let mut histogram = vec![0u64; ENTROPY_BINS];
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut driver = RolloutDriver::new(env_cfg.build(seed)?, seed);
        let max_entropy = (driver.env().n_actions() as f64).ln();
        let (mut total, mut crashes) = (0.0, 0u64);
        for _ in 0..n_steps {
            let s = driver.step(policy, None)?;
            total += s.transition.reward;
            crashes += u64::from(s.transition.crashed);
            let h = entropy(&s.output.distribution);
            let bin = if max_entropy > 0.0 { (h / max_entropy * ENTROPY_BINS as f64) as usize } else { 0 };
            histogram[bin.min(ENTROPY_BINS - 1)] += 1;
        }
        per_seed.push(SeedMetrics {
            seed,
            steps: n_steps,
            return_per_step: total / n_steps as f64,
            crashes,
            crashes_per_step: crashes as f64 / n_steps as f64,
        });
    }
    let returns: Vec<f64> = per_seed.iter().map(|m| m.return_per_step).collect();
    let crash_rates: Vec<f64> = per_seed.iter().map(|m| m.crashes_per_step).collect();
    let (mean_return_per_step, stderr_return_per_step) = mean_stderr(&returns);
    let (mean_crashes_per_step, stderr_crashes_per_step) = mean_stderr(&crash_rates);
    Ok(EvalReport {
        policy: policy.id(),
        per_seed,
        mean_return_per_step,
        stderr_return_per_step,
        mean_crashes_per_step,
        stderr_crashes_per_step,
        entropy_histogram: histogram,
    })
}
