mod support;

use critstates::criticality::{discretize, CriticalityThreshold};
use critstates::envs::make_env;
use critstates::exposure::random_deck_from_buffer;
use critstates::mdp::{soft_bellman_backup, soft_value_iteration, MaxEntConfig, TabularMdp};
use critstates::rl::{NetworkPolicy, QNetwork, TdSample};
use critstates::selection::{collect_states, eight_point_fixture, kmeanspp, PipelineConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::oracles::*;

fn to_mdp(m: &RawMdp) -> TabularMdp {
    TabularMdp::new(m.p.len(), m.p[0].len(), m.p.clone(), m.r.clone(), m.gamma).unwrap()
}

#[test]
fn soft_value_iteration_matches_brute_force() {
    for seed in 0..20 {
        let raw = random_raw_mdp(5, 3, 0.9, seed);
        let mdp = to_mdp(&raw);
        for alpha in [0.1, 1.0] {
            let (table, _) = soft_value_iteration(&mdp, &MaxEntConfig { tolerance: 1e-12, ..MaxEntConfig::with_alpha(alpha) })
                .unwrap();
            let v = brute_force_soft_v(&raw, alpha);
            let q = q_from_v(&raw, &v);
            for s in 0..5 {
                assert!((table.v[s] - v[s]).abs() < 1e-6, "seed {seed} alpha {alpha}");
                for a in 0..3 {
                    assert!((table.q[s][a] - q[s][a]).abs() < 1e-6);
                }
            }
        }
    }
}

#[test]
fn k_means_reaches_the_exhaustive_optimum() {
    let pts = eight_point_fixture();
    let optimum = brute_force_kmeans(&pts, 3);
    let got = kmeanspp(&pts, 3, 0, 100, 10).unwrap();
    assert!((got.inertia - optimum).abs() < 1e-9, "{} vs {optimum}", got.inertia);
}

#[test]
fn td_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let net = QNetwork::init(&[2, 4, 3], &mut rng).unwrap();
    let obs: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
    let batch: Vec<TdSample> = obs
        .iter()
        .enumerate()
        .map(|(i, o)| TdSample { observation: o, action: i % 3, target: i as f64 * 0.4 - 0.7 })
        .collect();
    let analytic = net.td_loss_gradient(&batch).unwrap().gradient;
    let params = net.params();
    let h = 1e-6;
    for i in 0..params.len() {
        let mut probe = net.clone();
        let mut p = params.clone();
        p[i] += h;
        probe.set_params(&p).unwrap();
        let up = probe.td_loss_gradient(&batch).unwrap().loss;
        p[i] -= 2.0 * h;
        probe.set_params(&p).unwrap();
        let down = probe.td_loss_gradient(&batch).unwrap().loss;
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-6);
        assert!((analytic[i] - numeric).abs() / scale < 1e-4, "param {i}: {} vs {numeric}", analytic[i]);
    }
}

#[test]
fn steering_grid_has_exact_endpoints_and_spacing() {
    let g = discretize(-1.0, 1.0, 200).unwrap();
    assert_eq!((g.points[0], g.points[199]), (-1.0, 1.0));
    assert_eq!(g.spacing(), 2.0 / 199.0);
}

#[test]
fn random_decks_hit_the_top_decile_at_its_base_rate() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let policy = NetworkPolicy::new(QNetwork::init(&[6, 8, 3], &mut rng).unwrap(), 0.1);
    let cfg = PipelineConfig { steps: 2000, k: 1, threshold: CriticalityThreshold::default(), ..PipelineConfig::default() };
    let env = make_env("pong", 0).unwrap();
    let buffer = collect_states(env.clone(), &policy, cfg.steps, 0, cfg.method, cfg.entropy).unwrap();
    let mut hits = 0;
    for seed in 0..1000 {
        let deck = random_deck_from_buffer(&buffer, &policy, env.as_ref(), &cfg, seed).unwrap();
        hits += usize::from(deck.entries[0].above_threshold);
    }
    let rate = hits as f64 / 1000.0;
    assert!((rate - 0.1).abs() <= 0.03, "rate {rate}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn soft_backup_is_a_gamma_contraction(seed in any::<u64>(), alpha in 0.05f64..2.0, gamma in 0.1f64..0.99) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = TabularMdp::random(4, 3, gamma, &mut rng).unwrap();
        let cfg = MaxEntConfig::with_alpha(alpha);
        let q1: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let q2: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let sup = |a: &[Vec<f64>], b: &[Vec<f64>]| {
            a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
        };
        let t1 = soft_bellman_backup(&mdp, &q1, &cfg).unwrap();
        let t2 = soft_bellman_backup(&mdp, &q2, &cfg).unwrap();
        prop_assert!(sup(&t1, &t2) <= gamma * sup(&q1, &q2) + 1e-12);
    }
}
