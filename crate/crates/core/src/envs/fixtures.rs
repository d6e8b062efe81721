//! Curated diagnostic states with ground-truth criticality labels.
//!
//! Labels come from each environment's scripted oracle rule; the unit tests
//! below re-check every label against it.

use serde::{Deserialize, Serialize};

use super::driving::{driving_oracle_critical, DrivingConfig, DrivingEnv, DrivingState, Neighbor};
use super::pong::{pong_oracle_critical, PongConfig, PongEnv, PongState};
use super::Environment;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "env", content = "state", rename_all = "snake_case")]
pub enum QueryState {
    Pong(PongState),
    Driving(DrivingState),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledState {
    pub name: String,
    pub critical: bool,
    pub state: QueryState,
}

impl QueryState {
    pub fn env_name(&self) -> &'static str {
        match self {
            QueryState::Pong(_) => "pong",
            QueryState::Driving(_) => "driving",
        }
    }

    /// Environment positioned exactly at this state, with default config.
    pub fn build_env(&self, seed: u64) -> Result<Box<dyn Environment>> {
        Ok(match self {
            QueryState::Pong(s) => Box::new(PongEnv::from_state(PongConfig::default(), *s, seed)?),
            QueryState::Driving(s) => Box::new(DrivingEnv::from_state(DrivingConfig::default(), s, seed)?),
        })
    }
}

impl LabeledState {
    pub fn build_env(&self, seed: u64) -> Result<Box<dyn Environment>> {
        self.state.build_env(seed)
    }
}

pub fn query_states(env_name: &str) -> Result<Vec<LabeledState>> {
    match env_name {
        "pong" => Ok(pong_fixtures()),
        "driving" => Ok(driving_fixtures()),
        other => Err(Error::UnknownEnv(other.to_string())),
    }
}

fn pong(ball: (f64, f64), v: (f64, f64), paddle_y: f64) -> PongState {
    PongState { ball_x: ball.0, ball_y: ball.1, ball_vx: v.0, ball_vy: v.1, paddle_y, opponent_y: 0.5 }
}

fn pong_fixtures() -> Vec<LabeledState> {
    let cfg = PongConfig::default();
    let states = [
        // ball far away or heading toward the opponent: plenty of time
        pong((0.5, 0.5), (0.03, 0.0), 0.5),
        pong((0.75, 0.4), (-0.025, 0.015), 0.5),
        pong((0.15, 0.6), (0.028, -0.01), 0.3),
        pong((0.6, 0.9), (-0.02, -0.02), 0.2),
        // ball about to reach the paddle, which is out of position
        pong((0.2, 0.8), (-0.028, 0.01), 0.45),
        pong((0.15, 0.2), (-0.025, -0.015), 0.6),
    ];
    states
        .into_iter()
        .enumerate()
        .map(|(i, s)| LabeledState {
            name: format!("s{}", i + 1),
            critical: pong_oracle_critical(&s, &cfg),
            state: QueryState::Pong(s),
        })
        .collect()
}

fn car(rel_x: f64, rel_y: f64, speed: f64) -> Neighbor {
    Neighbor { rel_x, rel_y, rel_heading: 0.0, speed }
}

fn driving(ego_x: f64, heading: f64, cars: &[Neighbor]) -> DrivingState {
    let cfg = DrivingConfig::default();
    let mut neighbors: Vec<Neighbor> = cars.to_vec();
    neighbors.sort_by(|a, b| a.rel_x.hypot(a.rel_y).total_cmp(&b.rel_x.hypot(b.rel_y)));
    for n in &mut neighbors {
        n.rel_heading = -heading;
    }
    neighbors.resize(cfg.k_neighbors, Neighbor::PADDING);
    DrivingState { lane_index: cfg.lane_of(ego_x), ego_x, ego_y: 0.0, heading, steering_angle: 0.0, neighbors }
}

fn driving_fixtures() -> Vec<LabeledState> {
    let cfg = DrivingConfig::default();
    let states = [
        // open road
        driving(1.5, 0.0, &[]),
        // traffic far ahead in another lane
        driving(1.5, 0.0, &[car(-1.0, 6.0, 0.5), car(1.0, 8.5, 0.4)]),
        // slow car closing in the ego lane, both neighbours open
        driving(1.5, 0.0, &[car(0.0, 2.0, 0.3)]),
        // car ahead with the left lane blocked alongside
        driving(1.5, 0.0, &[car(0.0, 1.6, 0.4), car(-1.0, 0.9, 0.5)]),
        // car ahead with the right lane blocked a little further on
        driving(1.5, 0.0, &[car(0.0, 2.4, 0.35), car(1.0, 2.0, 0.6)]),
        // outer lane: the only escape is toward the middle
        driving(0.5, 0.0, &[car(0.0, 2.0, 0.4)]),
        // outer lane, middle lane occupied further ahead
        driving(2.5, 0.0, &[car(0.0, 2.2, 0.3), car(-1.0, 3.5, 0.5)]),
        // drifting toward the road edge
        driving(0.2, -0.2, &[]),
        // boxed in: car close ahead, both neighbouring lanes occupied
        driving(1.5, 0.0, &[car(0.0, 1.2, 0.3), car(-1.0, 2.5, 0.5), car(1.0, 2.5, 0.5)]),
    ];
    states
        .into_iter()
        .enumerate()
        .map(|(i, s)| LabeledState {
            name: format!("s{}", i + 1),
            critical: driving_oracle_critical(&s, &cfg),
            state: QueryState::Driving(s),
        })
        .collect()
}
