//! Critical-state selection: roll out the policy, keep the most critical
//! fraction, cluster it on the policy's own features and pick the most
//! critical member of each cluster.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::criticality::{resolve_threshold, score_output, CriticalityMethod, CriticalityThreshold, EntropyOptions};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::mdp::ActionDistribution;
use crate::policy::Policy;
use crate::render::Scene;
use crate::rollout::{derive_seed, RolloutDriver};

/// On-policy states with their criticality scores.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBuffer {
    pub observations: Vec<Vec<f64>>,
    /// Rendered scenes, one per row when captured.
    pub scenes: Vec<Scene>,
    /// Environment state snapshots, one per row when captured.
    pub states: Vec<serde_json::Value>,
    pub scores: Vec<f64>,
    pub method: CriticalityMethod,
    pub seed: u64,
    pub policy_hash: String,
}

const BUFFER_MAGIC: &[u8; 4] = b"CSB1";

impl StateBuffer {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn empty(method: CriticalityMethod, seed: u64, policy_hash: String) -> Self {
        Self {
            observations: Vec::new(),
            scenes: Vec::new(),
            states: Vec::new(),
            scores: Vec::new(),
            method,
            seed,
            policy_hash,
        }
    }

    /// Binary container: magic, u64 rows, u64 obs_dim, u64 seed, u8 method,
    /// u32 + policy hash, then row-major f64 observations and the f64 scores.
    /// Scenes and state snapshots are not persisted.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let dim = self.observations.first().map_or(0, Vec::len);
        w.write_all(BUFFER_MAGIC)?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        w.write_all(&(dim as u64).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&[u8::from(self.method == CriticalityMethod::ValueBased)])?;
        w.write_all(&(self.policy_hash.len() as u32).to_le_bytes())?;
        w.write_all(self.policy_hash.as_bytes())?;
        for row in &self.observations {
            for v in row {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for s in &self.scores {
            w.write_all(&s.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BUFFER_MAGIC {
            return Err(Error::InvalidInput("not a state buffer file".into()));
        }
        let mut u64_buf = [0u8; 8];
        let mut read_u64 = |r: &mut dyn Read| -> Result<u64> {
            r.read_exact(&mut u64_buf)?;
            Ok(u64::from_le_bytes(u64_buf))
        };
        let rows = read_u64(&mut r)? as usize;
        let dim = read_u64(&mut r)? as usize;
        let seed = read_u64(&mut r)?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let method = if flag[0] == 1 { CriticalityMethod::ValueBased } else { CriticalityMethod::EntropyBased };
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut hash = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut hash)?;
        let policy_hash = String::from_utf8(hash).map_err(|_| Error::InvalidInput("policy hash not UTF-8".into()))?;
        let read_f64 = |r: &mut dyn Read| -> Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let mut observations = Vec::with_capacity(rows);
        for _ in 0..rows {
            observations.push((0..dim).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?);
        }
        let scores = (0..rows).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        Ok(Self { observations, scores, method, seed, policy_hash, ..Self::empty(method, seed, String::new()) })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Rolls out `policy` for `steps` steps, scoring every visited state.
pub fn collect_states(
    env: Box<dyn Environment>,
    policy: &dyn Policy,
    steps: usize,
    seed: u64,
    method: CriticalityMethod,
    opts: EntropyOptions,
) -> Result<StateBuffer> {
    let mut buf = StateBuffer::empty(method, seed, policy.id());
    buf.observations.reserve(steps);
    let mut driver = RolloutDriver::new(env, seed);
    for completed in 0..steps {
        let scene = driver.env().scene();
        let state = driver.env().state_json();
        let step = driver
            .step(policy, None)
            .map_err(|e| Error::PartialRollout { completed, reason: e.to_string() })?;
        let score = score_output(&step.output, method, opts)
            .map_err(|e| Error::PartialRollout { completed, reason: e.to_string() })?;
        if !score.is_finite() {
            return Err(Error::PartialRollout { completed, reason: "non-finite score".into() });
        }
        buf.observations.push(step.observation);
        buf.scenes.push(scene);
        buf.states.push(state);
        buf.scores.push(score);
    }
    Ok(buf)
}

/// Indices of the `⌈frac·T⌉` highest scores, most critical first; ties go to the lower index.
pub fn top_fraction(scores: &[f64], frac: f64) -> Result<Vec<usize>> {
    if scores.is_empty() {
        return Err(Error::InvalidInput("cannot filter an empty buffer".into()));
    }
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(Error::InvalidInput(format!("fraction {frac} outside (0, 1]")));
    }
    // absorb representation error such as 0.3·10 = 3.0000000000000004
    let count = ((frac * scores.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(count.min(scores.len()));
    Ok(order)
}

/// Per-state features: the policy's last hidden layer when it has one, otherwise the raw observation.
pub fn features(policy: &dyn Policy, observations: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let rows = observations
        .iter()
        .map(|o| Ok(policy.features(o)?.unwrap_or_else(|| o.clone())))
        .collect::<Result<Vec<Vec<f64>>>>()?;
    if let Some(first) = rows.first() {
        if rows.iter().any(|r| r.len() != first.len()) {
            return Err(Error::InvalidInput("feature rows have inconsistent dimensions".into()));
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after every assignment step of the winning restart.
    pub history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn count_distinct(points: &[Vec<f64>]) -> usize {
    let keys: HashSet<Vec<u64>> = points.iter().map(|p| p.iter().map(|v| v.to_bits()).collect()).collect();
    keys.len()
}

fn plus_plus_seeds(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        if !(total > 0.0) {
            break;
        }
        let mut u = rng.random::<f64>() * total;
        let mut pick = d2.iter().rposition(|d| *d > 0.0).unwrap_or(0);
        for (i, d) in d2.iter().enumerate() {
            if u < *d {
                pick = i;
                break;
            }
            u -= d;
        }
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iters: usize) -> Clustering {
    let k = centroids.len();
    let dim = points[0].len();
    let mut assignments: Vec<usize> = vec![usize::MAX; points.len()];
    let mut history: Vec<f64> = Vec::new();
    for _ in 0..max_iters.max(1) {
        let mut changed = false;
        let mut inertia = 0.0;
        for (a, p) in assignments.iter_mut().zip(points) {
            let (c, d) = nearest(p, &centroids);
            changed |= *a != c;
            *a = c;
            inertia += d;
        }
        if let Some(prev) = history.last() {
            debug_assert!(inertia <= prev + 1e-9 * prev.max(1.0), "Lloyd step increased inertia");
        }
        history.push(inertia);
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (a, p) in assignments.iter().zip(points) {
            counts[*a] += 1;
            for (s, v) in sums[*a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // re-seed an emptied cluster on the point worst served by its centroid
                let far = (0..points.len())
                    .max_by(|&i, &j| {
                        let di = sq_dist(&points[i], &centroids[assignments[i]]);
                        let dj = sq_dist(&points[j], &centroids[assignments[j]]);
                        di.total_cmp(&dj).then(j.cmp(&i))
                    })
                    .expect("nonempty");
                centroids[c] = points[far].clone();
            }
        }
    }
    // final assignment against the final centroids keeps the nearest-centroid invariant
    let mut inertia = 0.0;
    for (a, p) in assignments.iter_mut().zip(points) {
        let (c, d) = nearest(p, &centroids);
        *a = c;
        inertia += d;
    }
    if history.last().is_none_or(|h| *h != inertia) {
        history.push(inertia);
    }
    Clustering { k, assignments, centroids, inertia, history }
}

/// k-means++ seeding followed by Lloyd iterations, best of `restarts` runs.
///
/// When `k` exceeds the number of distinct points the effective `k` is reduced.
pub fn kmeanspp(points: &[Vec<f64>], k: usize, seed: u64, max_iters: usize, restarts: usize) -> Result<Clustering> {
    if points.is_empty() {
        return Err(Error::InvalidInput("cannot cluster an empty feature set".into()));
    }
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidInput("feature rows must be finite and equally sized".into()));
    }
    let distinct = count_distinct(points);
    let effective_k = if k > distinct {
        log::warn!("k = {k} exceeds {distinct} distinct points; clustering with k = {distinct}");
        distinct
    } else {
        k
    };
    let mut best: Option<Clustering> = None;
    for r in 0..restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, r as u64));
        let seeds = plus_plus_seeds(points, effective_k, &mut rng);
        let c = lloyd(points, seeds, max_iters);
        if best.as_ref().is_none_or(|b| c.inertia < b.inertia) {
            best = Some(c);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Representative {
    /// Row in the state buffer.
    pub index: usize,
    pub score: f64,
    pub cluster: usize,
}

/// Most critical member per cluster, ordered by descending score.
///
/// `members[i]` is a buffer row and `clustering.assignments[i]` its cluster.
/// Representatives whose observations coincide within 1e-6 (L∞) are
/// de-duplicated: the lower-scored one is replaced by the next most critical
/// member of its own cluster.
pub fn select_representatives(buffer: &StateBuffer, members: &[usize], clustering: &Clustering) -> Result<Vec<Representative>> {
    if members.len() != clustering.assignments.len() {
        return Err(Error::InvalidInput("clustering does not cover the filtered states".into()));
    }
    let mut by_cluster: Vec<Vec<usize>> = vec![Vec::new(); clustering.k];
    for (row, c) in members.iter().zip(&clustering.assignments) {
        by_cluster[*c].push(*row);
    }
    for rows in &mut by_cluster {
        rows.sort_by(|&a, &b| buffer.scores[b].total_cmp(&buffer.scores[a]).then(a.cmp(&b)));
    }
    let mut candidates: Vec<(usize, usize)> = (0..clustering.k).filter(|c| !by_cluster[*c].is_empty()).map(|c| (c, 0)).collect();
    candidates.sort_by(|a, b| {
        let (ra, rb) = (by_cluster[a.0][0], by_cluster[b.0][0]);
        buffer.scores[rb].total_cmp(&buffer.scores[ra]).then(ra.cmp(&rb))
    });

    let duplicate = |a: usize, b: usize| {
        buffer.observations[a].iter().zip(&buffer.observations[b]).all(|(x, y)| (x - y).abs() < 1e-6)
    };
    let mut chosen: Vec<Representative> = Vec::new();
    // candidates are visited best-first, so earlier picks always outrank later ones
    for (cluster, _) in candidates {
        let pick = by_cluster[cluster].iter().copied().find(|&row| chosen.iter().all(|r| !duplicate(r.index, row)));
        if let Some(row) = pick {
            chosen.push(Representative { index: row, score: buffer.scores[row], cluster });
        }
    }
    chosen.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    Ok(chosen)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Rollout length.
    #[serde(rename = "T")]
    pub steps: usize,
    pub frac: f64,
    pub k: usize,
    pub method: CriticalityMethod,
    pub threshold: CriticalityThreshold,
    pub entropy: EntropyOptions,
    pub rollout_seed: u64,
    pub cluster_seed: u64,
    pub restarts: usize,
    pub max_iters: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            frac: 0.1,
            k: 10,
            method: CriticalityMethod::ValueBased,
            threshold: CriticalityThreshold::default(),
            entropy: EntropyOptions::default(),
            rollout_seed: 0,
            cluster_seed: 0,
            restarts: 10,
            max_iters: 300,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub buffer: StateBuffer,
    /// Buffer rows kept by the top-fraction filter, most critical first.
    pub filtered: Vec<usize>,
    pub clustering: Clustering,
    pub representatives: Vec<Representative>,
    /// Absolute cutoff resolved from the configured threshold.
    pub cutoff: f64,
}

/// Collects, filters, clusters and selects.
pub fn run_pipeline(env: Box<dyn Environment>, policy: &dyn Policy, cfg: &PipelineConfig) -> Result<PipelineResult> {
    if cfg.k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let buffer = collect_states(env, policy, cfg.steps, cfg.rollout_seed, cfg.method, cfg.entropy)?;
    let filtered = top_fraction(&buffer.scores, cfg.frac)?;
    let cutoff = resolve_threshold(&buffer.scores, cfg.threshold)?;
    let observations: Vec<Vec<f64>> = filtered.iter().map(|&i| buffer.observations[i].clone()).collect();
    let feats = features(policy, &observations)?;
    let clustering = kmeanspp(&feats, cfg.k, cfg.cluster_seed, cfg.max_iters, cfg.restarts)?;
    let representatives = select_representatives(&buffer, &filtered, &clustering)?;
    Ok(PipelineResult { buffer, filtered, clustering, representatives, cutoff })
}

/// Eight 2-D points with three loose groups and one straggler between
/// them, small enough for exhaustive k = 3 partition search.
pub fn eight_point_fixture() -> Vec<Vec<f64>> {
    [[0.0, 0.0], [1.0, 0.2], [0.3, 1.1], [5.0, 5.0], [6.1, 5.2], [5.4, 6.3], [9.0, 0.5], [3.2, 2.9]]
        .iter()
        .map(|p| p.to_vec())
        .collect()
}

/// Distribution the policy assigns at a buffer row.
pub fn distribution_at(policy: &dyn Policy, buffer: &StateBuffer, row: usize) -> Result<ActionDistribution> {
    policy.distribution(&buffer.observations[row])
}
