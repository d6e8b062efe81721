//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the library's solvers.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random MDP as plain nested vectors: `p[s][a][s']`, `r[s][a][s']`.
pub struct RawMdp {
    pub p: Vec<Vec<Vec<f64>>>,
    pub r: Vec<Vec<Vec<f64>>>,
    pub gamma: f64,
}

pub fn random_raw_mdp(n_s: usize, n_a: usize, gamma: f64, seed: u64) -> RawMdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = vec![vec![vec![0.0; n_s]; n_a]; n_s];
    let mut r = vec![vec![vec![0.0; n_s]; n_a]; n_s];
    for s in 0..n_s {
        for a in 0..n_a {
            let w: Vec<f64> = (0..n_s).map(|_| rng.random::<f64>() + 1e-3).collect();
            let total: f64 = w.iter().sum();
            for s2 in 0..n_s {
                p[s][a][s2] = w[s2] / total;
                r[s][a][s2] = rng.random::<f64>() * 2.0 - 1.0;
            }
        }
    }
    RawMdp { p, r, gamma }
}

/// Soft fixed point by plain repeated substitution on V, with no
/// log-sum-exp stabilization, run until the iterate stops moving.
pub fn brute_force_soft_v(m: &RawMdp, alpha: f64) -> Vec<f64> {
    let n_s = m.p.len();
    let n_a = m.p[0].len();
    let mut v = vec![0.0; n_s];
    for _ in 0..1_000_000 {
        let mut next = vec![0.0; n_s];
        for s in 0..n_s {
            let mut z = 0.0;
            for a in 0..n_a {
                let mut q = 0.0;
                for s2 in 0..n_s {
                    q += m.p[s][a][s2] * (m.r[s][a][s2] + m.gamma * v[s2]);
                }
                z += (q / alpha).exp();
            }
            next[s] = alpha * z.ln();
        }
        let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if delta < 1e-13 {
            break;
        }
    }
    v
}

/// `Q(s,a) = Σ P (R + γ V)` from a value vector.
pub fn q_from_v(m: &RawMdp, v: &[f64]) -> Vec<Vec<f64>> {
    m.p.iter()
        .zip(&m.r)
        .map(|(ps, rs)| {
            ps.iter()
                .zip(rs)
                .map(|(p, r)| p.iter().zip(r).zip(v).map(|((p, r), v)| p * (r + m.gamma * v)).sum())
                .collect()
        })
        .collect()
}

/// Minimum k-means inertia over every assignment of points to `k` nonempty clusters.
pub fn brute_force_kmeans(points: &[Vec<f64>], k: usize) -> f64 {
    let n = points.len();
    let dim = points[0].len();
    let mut best = f64::INFINITY;
    let total = k.pow(n as u32);
    for code in 0..total {
        let mut labels = Vec::with_capacity(n);
        let mut c = code;
        for _ in 0..n {
            labels.push(c % k);
            c /= k;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (l, p) in labels.iter().zip(points) {
            counts[*l] += 1;
            for (s, x) in sums[*l].iter_mut().zip(p) {
                *s += x;
            }
        }
        if counts.contains(&0) {
            continue;
        }
        let mut inertia = 0.0;
        for (l, p) in labels.iter().zip(points) {
            for (x, s) in p.iter().zip(&sums[*l]) {
                let d = x - s / counts[*l] as f64;
                inertia += d * d;
            }
        }
        best = best.min(inertia);
    }
    best
}

/// Two-sided normal-approximation check that `hits` out of `n` is consistent with rate `p`.
pub fn binomial_ok(hits: usize, n: usize, p: f64, z: f64) -> bool {
    let mean = n as f64 * p;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    (hits as f64 - mean).abs() <= z * sd
}
