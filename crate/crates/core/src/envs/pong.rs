//! Vector-state Pong on the unit board.
//!
//! The agent's paddle sits on the left edge (`x = 0`), a scripted opponent on
//! the right (`x = 1`). Velocities are in board units per step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ActionSet, EnvSpec, Environment, Transition};
use crate::error::{Error, Result};
use crate::render::{Color, Entity, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PongAction {
    Up,
    Stay,
    Down,
}

impl PongAction {
    pub const ALL: [PongAction; 3] = [PongAction::Up, PongAction::Stay, PongAction::Down];

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    fn direction(self) -> f64 {
        match self {
            PongAction::Up => 1.0,
            PongAction::Stay => 0.0,
            PongAction::Down => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PongConfig {
    pub paddle_half_height: f64,
    pub paddle_speed: f64,
    pub opponent_speed: f64,
    pub ball_speed: f64,
    pub max_ball_speed: f64,
    /// Largest serve angle from the horizontal, radians.
    pub serve_angle: f64,
    /// Distance from the agent's paddle within which an approaching ball is critical.
    pub critical_distance: f64,
    pub step_limit: usize,
}

impl Default for PongConfig {
    fn default() -> Self {
        Self {
            paddle_half_height: 0.1,
            paddle_speed: 0.04,
            opponent_speed: 0.025,
            ball_speed: 0.03,
            max_ball_speed: 0.05,
            serve_angle: 0.6,
            critical_distance: 0.3,
            step_limit: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PongState {
    pub ball_x: f64,
    pub ball_y: f64,
    pub ball_vx: f64,
    pub ball_vy: f64,
    pub paddle_y: f64,
    pub opponent_y: f64,
}

impl PongState {
    pub fn validate(&self, cfg: &PongConfig) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(self.ball_x) && unit(self.ball_y) && unit(self.paddle_y) && unit(self.opponent_y)) {
            return Err(Error::InvalidInput("pong positions must lie on the unit board".into()));
        }
        if !(self.ball_vx.hypot(self.ball_vy) <= cfg.max_ball_speed) {
            return Err(Error::InvalidInput("ball speed exceeds the configured maximum".into()));
        }
        Ok(())
    }

    pub fn observation(&self, cfg: &PongConfig) -> Vec<f64> {
        vec![
            self.ball_x,
            self.ball_y,
            self.ball_vx / cfg.max_ball_speed,
            self.ball_vy / cfg.max_ball_speed,
            self.paddle_y,
            self.opponent_y,
        ]
    }

    pub fn speed(&self) -> f64 {
        self.ball_vx.hypot(self.ball_vy)
    }
}

/// Folds a coordinate into [0, 1] by mirror reflection at the walls.
fn fold_unit(y: f64) -> f64 {
    let m = y.rem_euclid(2.0);
    if m > 1.0 {
        2.0 - m
    } else {
        m
    }
}

/// Advances the ball one step with wall reflection. Returns the new state and,
/// if the ball crossed a paddle column, the side (−1 left, +1 right) and the
/// crossing height.
pub(crate) fn advance_ball(s: &PongState) -> (PongState, Option<(i8, f64)>) {
    let mut next = *s;
    let raw_y = s.ball_y + s.ball_vy;
    next.ball_x = s.ball_x + s.ball_vx;
    next.ball_y = fold_unit(raw_y);
    if !(0.0..=1.0).contains(&raw_y) {
        next.ball_vy = -s.ball_vy;
    }
    let crossing = |edge: f64| {
        let t = (edge - s.ball_x) / s.ball_vx;
        fold_unit(s.ball_y + t * s.ball_vy)
    };
    if next.ball_x <= 0.0 && s.ball_vx < 0.0 {
        (next, Some((-1, crossing(0.0))))
    } else if next.ball_x >= 1.0 && s.ball_vx > 0.0 {
        (next, Some((1, crossing(1.0))))
    } else {
        (next, None)
    }
}

#[derive(Debug, Clone)]
pub struct PongEnv {
    cfg: PongConfig,
    seed: u64,
    rng: ChaCha8Rng,
    state: PongState,
    steps: usize,
}

impl PongEnv {
    pub fn new(cfg: PongConfig, seed: u64) -> Result<Self> {
        if !(cfg.paddle_half_height > 0.0 && cfg.ball_speed > 0.0 && cfg.ball_speed <= cfg.max_ball_speed) {
            return Err(Error::InvalidInput("invalid pong config".into()));
        }
        let mut env = Self {
            cfg,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: PongState { ball_x: 0.5, ball_y: 0.5, ball_vx: 0.0, ball_vy: 0.0, paddle_y: 0.5, opponent_y: 0.5 },
            steps: 0,
        };
        env.reset(seed);
        Ok(env)
    }

    pub fn from_state(cfg: PongConfig, state: PongState, seed: u64) -> Result<Self> {
        state.validate(&cfg)?;
        let mut env = Self::new(cfg, seed)?;
        env.state = state;
        Ok(env)
    }

    pub fn state(&self) -> PongState {
        self.state
    }

    pub fn config(&self) -> &PongConfig {
        &self.cfg
    }

    pub fn step_action(&mut self, action: PongAction) -> Transition {
        let cfg = &self.cfg;
        let s = &mut self.state;
        s.paddle_y = (s.paddle_y + action.direction() * cfg.paddle_speed).clamp(0.0, 1.0);
        let chase = (s.ball_y - s.opponent_y).clamp(-cfg.opponent_speed, cfg.opponent_speed);
        s.opponent_y = (s.opponent_y + chase).clamp(0.0, 1.0);

        let (mut next, crossing) = advance_ball(s);
        let mut reward = 0.0;
        let mut done = false;
        if let Some((side, y)) = crossing {
            let paddle = if side < 0 { next.paddle_y } else { next.opponent_y };
            if (y - paddle).abs() <= cfg.paddle_half_height {
                next.ball_vx = -next.ball_vx;
                next.ball_x = if side < 0 { -next.ball_x } else { 2.0 - next.ball_x };
            } else {
                done = true;
                reward = f64::from(side);
                next.ball_x = next.ball_x.clamp(0.0, 1.0);
            }
        }
        *s = next;
        self.steps += 1;
        Transition { observation: s.observation(cfg), reward, done, crashed: false }
    }
}

impl Environment for PongEnv {
    fn name(&self) -> &'static str {
        "pong"
    }

    fn spec(&self) -> EnvSpec {
        EnvSpec {
            observation_dim: 6,
            action_set: ActionSet::Discrete { n: 3 },
            step_limit: self.cfg.step_limit,
            seed: self.seed,
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.seed = seed;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let angle = self.rng.random_range(-self.cfg.serve_angle..=self.cfg.serve_angle);
        let dir = if self.rng.random::<bool>() { 1.0 } else { -1.0 };
        let y = self.rng.random_range(0.3..=0.7);
        self.state = PongState {
            ball_x: 0.5,
            ball_y: y,
            ball_vx: dir * self.cfg.ball_speed * angle.cos(),
            ball_vy: self.cfg.ball_speed * angle.sin(),
            paddle_y: 0.5,
            opponent_y: 0.5,
        };
        self.steps = 0;
        self.observation()
    }

    fn observation(&self) -> Vec<f64> {
        self.state.observation(&self.cfg)
    }

    fn step(&mut self, action: usize) -> Result<Transition> {
        let a = PongAction::from_index(action).ok_or_else(|| Error::InvalidInput(format!("pong action {action}")))?;
        Ok(self.step_action(a))
    }

    fn scene(&self) -> Scene {
        let s = &self.state;
        let h = 2.0 * self.cfg.paddle_half_height;
        let entities = vec![
            Entity::rect("board", 0.5, 0.5, 1.0, 1.0, 0.0, Color::BOARD),
            Entity::rect("paddle", 0.01, s.paddle_y, 0.02, h, 0.0, Color::EGO),
            Entity::rect("opponent", 0.99, s.opponent_y, 0.02, h, 0.0, Color::TRAFFIC),
            Entity::rect("ball", s.ball_x, s.ball_y, 0.025, 0.025, 0.0, Color::MARKING),
        ];
        Scene::new("pong", (0.0, 0.0), (1.0, 1.0), entities)
    }

    fn state_json(&self) -> serde_json::Value {
        serde_json::to_value(self.state).unwrap_or(serde_json::Value::Null)
    }

    fn oracle_critical(&self) -> bool {
        pong_oracle_critical(&self.state, &self.cfg)
    }

    fn action_label(&self, action: usize) -> String {
        match PongAction::from_index(action) {
            Some(a) => format!("{a:?}").to_lowercase(),
            None => format!("invalid {action}"),
        }
    }

    fn clone_box(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}

/// Ball approaching the agent's paddle and within the critical distance.
pub fn pong_oracle_critical(state: &PongState, cfg: &PongConfig) -> bool {
    state.ball_vx < 0.0 && state.ball_x < cfg.critical_distance
}
