mod support;

use std::sync::Arc;

use critstates::criticality::{CriticalityMethod, EntropyOptions};
use critstates::envs::make_env;
use critstates::Policy;
use critstates_service::session::{read_event_log, Case, Command, Controller, Mode, Oracle, Session, SessionConfig, SessionReport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn start(seed: u64, reveal: bool) -> Session {
    let policy: Arc<dyn Policy> = support::pong_policy(3);
    let cfg = SessionConfig {
        mode: Mode::Supervise,
        seed,
        method: CriticalityMethod::ValueBased,
        entropy: EntropyOptions::default(),
        cutoff: 0.05,
        oracle: Oracle::Scripted,
        reveal_oracle: reveal,
    };
    Session::start(format!("test-{seed}"), policy, make_env("pong", 0).unwrap(), cfg).unwrap()
}

#[test]
fn release_hands_the_seeded_stream_back_to_the_policy() {
    let policy = support::pong_policy(3);
    let mut s = start(11, false);
    for _ in 0..5 {
        s.step(Command::None).unwrap();
    }
    s.step(Command::TakeControl { action: 0 }).unwrap();
    s.step(Command::None).unwrap();
    let mut replay = s.driver().clone();
    let first = s.step(Command::Release).unwrap();
    assert_eq!(first.last.controller, Controller::Policy);
    let mut live = vec![first.last.applied_action];
    for _ in 0..30 {
        live.push(s.step(Command::None).unwrap().last.applied_action);
    }
    let offline: Vec<usize> = (0..31).map(|_| replay.step(policy.as_ref(), None).unwrap().applied_action).collect();
    assert_eq!(live, offline);
}

#[test]
fn sessions_from_one_checkpoint_are_independent() {
    let mut a = start(1, false);
    let mut b = start(2, false);
    let mut a2 = start(1, false);
    let run = |s: &mut Session| (0..50).map(|_| s.step(Command::None).unwrap().last.applied_action).collect::<Vec<_>>();
    let (ra, rb) = (run(&mut a), run(&mut b));
    assert_ne!(ra, rb);
    assert_eq!(ra, run(&mut a2));
}

#[test]
fn oracle_following_supervisor_never_lands_in_case_one() {
    let mut s = start(4, true);
    let mut critical = s.frame().in_oracle.unwrap();
    for _ in 0..1000 {
        let cmd = if critical { Command::TakeControl { action: 1 } } else { Command::Release };
        critical = s.step(cmd).unwrap().frame.in_oracle.unwrap();
    }
    s.end().unwrap();
    let r = s.report().unwrap();
    assert!(r.interventions.len() > 20, "only {} interventions", r.interventions.len());
    assert_eq!(r.counts.case_1, 0);
    assert_eq!(r.counts.total(), r.interventions.len());
    assert!(r.interventions.iter().all(|i| i.case != Case::NotCritical && i.in_oracle));
    assert_eq!(r.takeover_rate_critical, 1.0);
    assert_eq!(r.takeover_rate_non_critical, 0.0);
}

#[test]
fn random_supervisor_takes_over_at_the_same_rate_everywhere() {
    let mut s = start(8, false);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let cmd = if rng.random_bool(0.3) { Command::TakeControl { action: rng.random_range(0..3) } } else { Command::Release };
        s.step(cmd).unwrap();
    }
    s.end().unwrap();
    let r = s.report().unwrap();
    let (n1, n2) = (r.oracle_critical_steps as f64, r.non_critical_steps as f64);
    assert!(n1 >= 50.0 && n2 >= 50.0, "{n1} critical / {n2} other steps");
    let (p1, p2) = (r.takeover_rate_critical, r.takeover_rate_non_critical);
    let pooled = (p1 * n1 + p2 * n2) / (n1 + n2);
    let z = (p1 - p2) / (pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2)).sqrt();
    assert!(z.abs() < 3.0, "rates {p1} vs {p2}, z = {z}");
    assert_eq!(r.human_steps as usize, r.interventions.len());
}

#[test]
fn report_replays_from_the_persisted_log() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.jsonl");
    let mut s = start(6, false);
    s.persist_to(&path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..300 {
        let cmd = match i % 40 {
            10 => Command::TakeControl { action: rng.random_range(0..3) },
            20 => Command::Release,
            _ => Command::None,
        };
        s.step(cmd).unwrap();
    }
    s.end().unwrap();
    let events = read_event_log(&path).unwrap();
    assert_eq!(events, s.events());
    let replayed = SessionReport::from_events(&events).unwrap();
    assert_eq!(replayed, s.report().unwrap());
    assert_eq!(replayed.interventions.len(), 8 * 10);
    assert!((0.0..=1.0).contains(&replayed.takeover_rate_critical));
    let truncated = &events[..events.len() - 1];
    assert!(SessionReport::from_events(truncated).is_err());
}
