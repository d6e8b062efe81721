//! Steering-only highway driving with kinematic bicycle dynamics.
//!
//! Coordinates are in lane widths. `x` is lateral (0 at the road's edge),
//! `y` is longitudinal progress. Heading is measured from the road direction,
//! positive toward increasing `x`. Ego speed is constant; every other car is
//! slower, so the ego has to weave through traffic.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ActionSet, EnvSpec, Environment, Transition};
use crate::criticality::{discretize, ActionGrid, OneStepModel, Outcome};
use crate::error::{Error, Result};
use crate::render::{Color, Entity, Scene};

/// Planar pose for the bicycle model; heading 0 points along +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let r = (angle + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r + 2.0 * PI
    } else {
        r
    }
}

/// One explicit-Euler step of the kinematic bicycle model.
pub fn bicycle_step(pose: Pose, speed: f64, steering_angle: f64, dt: f64, wheelbase: f64) -> Result<Pose> {
    if !(wheelbase > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidInput("wheelbase and dt must be positive".into()));
    }
    if !(steering_angle.abs() < PI / 2.0) {
        return Err(Error::InvalidInput(format!("steering angle {steering_angle} at or beyond ±π/2")));
    }
    Ok(Pose {
        x: pose.x + speed * pose.heading.cos() * dt,
        y: pose.y + speed * pose.heading.sin() * dt,
        heading: wrap_angle(pose.heading + speed / wheelbase * steering_angle.tan() * dt),
    })
}

/// Steering command in [−1, 1], scaled by `steer_scale` into a steering-angle change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrivingAction {
    steer_delta: f64,
}

impl DrivingAction {
    pub fn new(steer_delta: f64) -> Self {
        let v = if steer_delta.is_nan() { 0.0 } else { steer_delta.clamp(-1.0, 1.0) };
        Self { steer_delta: v }
    }

    pub fn steer_delta(&self) -> f64 {
        self.steer_delta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub forward: f64,
    pub proximity: f64,
    pub off_center: f64,
    pub turn: f64,
    pub steer: f64,
    pub crash: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self { forward: 1.0, proximity: 2.0, off_center: 0.1, turn: 0.1, steer: 0.05, crash: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DrivingConfig {
    pub n_lanes: usize,
    pub lane_width: f64,
    pub ego_speed: f64,
    pub dt: f64,
    pub wheelbase: f64,
    pub car_length: f64,
    pub car_width: f64,
    pub traffic_speed: (f64, f64),
    /// Mean traffic arrivals per step (Poisson).
    pub spawn_rate: f64,
    pub spawn_distance: f64,
    pub initial_cars: usize,
    pub sensing_range: f64,
    pub despawn_behind: f64,
    pub k_neighbors: usize,
    pub steer_scale: f64,
    pub max_steering: f64,
    pub safe_distance: f64,
    pub weights: RewardWeights,
    pub n_actions: usize,
    pub step_limit: usize,
}

impl Default for DrivingConfig {
    fn default() -> Self {
        Self {
            n_lanes: 3,
            lane_width: 1.0,
            ego_speed: 1.0,
            dt: 0.1,
            wheelbase: 0.5,
            car_length: 0.8,
            car_width: 0.5,
            traffic_speed: (0.3, 0.7),
            spawn_rate: 0.02,
            spawn_distance: 8.0,
            initial_cars: 2,
            sensing_range: 10.0,
            despawn_behind: 5.0,
            k_neighbors: 4,
            steer_scale: 0.1,
            max_steering: 0.4,
            safe_distance: 1.5,
            weights: RewardWeights::default(),
            n_actions: 200,
            step_limit: 1000,
        }
    }
}

impl DrivingConfig {
    fn validate(&self) -> Result<()> {
        let positive = [
            self.lane_width,
            self.ego_speed,
            self.dt,
            self.wheelbase,
            self.car_length,
            self.car_width,
            self.sensing_range,
            self.safe_distance,
        ];
        if self.n_lanes == 0 || self.k_neighbors == 0 || positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidInput("driving config has non-positive geometry".into()));
        }
        if !(self.max_steering > 0.0 && self.max_steering < PI / 2.0) {
            return Err(Error::InvalidInput("max_steering must lie in (0, π/2)".into()));
        }
        if !(self.traffic_speed.0 <= self.traffic_speed.1) || self.spawn_rate < 0.0 {
            return Err(Error::InvalidInput("invalid traffic parameters".into()));
        }
        Ok(())
    }

    pub fn road_width(&self) -> f64 {
        self.n_lanes as f64 * self.lane_width
    }

    pub fn lane_center(&self, lane: usize) -> f64 {
        (lane as f64 + 0.5) * self.lane_width
    }

    pub fn lane_of(&self, x: f64) -> usize {
        ((x / self.lane_width).floor().max(0.0) as usize).min(self.n_lanes - 1)
    }

    pub fn observation_dim(&self) -> usize {
        4 + 4 * self.k_neighbors
    }
}

/// Relative description of another car as seen from the ego.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub rel_x: f64,
    pub rel_y: f64,
    pub rel_heading: f64,
    pub speed: f64,
}

impl Neighbor {
    pub const PADDING_REL_Y: f64 = 1e6;

    pub const PADDING: Neighbor = Neighbor { rel_x: 0.0, rel_y: Self::PADDING_REL_Y, rel_heading: 0.0, speed: 0.0 };

    pub fn is_padding(&self) -> bool {
        self.rel_y >= Self::PADDING_REL_Y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrivingState {
    pub lane_index: usize,
    pub ego_x: f64,
    pub ego_y: f64,
    pub heading: f64,
    pub steering_angle: f64,
    /// Exactly K entries, nearest first, padded with [`Neighbor::PADDING`].
    pub neighbors: Vec<Neighbor>,
}

impl DrivingState {
    /// Network input: lane index, lateral position, heading, steering angle,
    /// then (rel_x, rel_y / range, rel_heading, speed) per neighbor. Longitudinal
    /// distance is clipped to the sensing range, which is also where padding lands.
    pub fn observation(&self, sensing_range: f64) -> Vec<f64> {
        let mut obs = Vec::with_capacity(4 + 4 * self.neighbors.len());
        obs.extend([self.lane_index as f64, self.ego_x, self.heading, self.steering_angle]);
        for n in &self.neighbors {
            let rel_y = n.rel_y.clamp(-sensing_range, sensing_range) / sensing_range;
            obs.extend([n.rel_x, rel_y, n.rel_heading, n.speed]);
        }
        obs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Car {
    pub x: f64,
    pub y: f64,
    pub speed: f64,
    pub desired_speed: f64,
}

/// Oriented rectangle used for collision checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionBox {
    pub cx: f64,
    pub cy: f64,
    /// Half extent along the heading direction.
    pub half_length: f64,
    pub half_width: f64,
    /// Direction of travel measured from +y toward +x.
    pub heading: f64,
}

impl CollisionBox {
    fn axes(&self) -> [(f64, f64); 2] {
        let (s, c) = self.heading.sin_cos();
        // forward is (sin h, cos h) in (x, y); lateral is perpendicular
        [(s, c), (c, -s)]
    }

    fn corners(&self) -> [(f64, f64); 4] {
        let [(fx, fy), (lx, ly)] = self.axes();
        let mut out = [(0.0, 0.0); 4];
        for (i, (a, b)) in [(1.0, 1.0), (1.0, -1.0), (-1.0, -1.0), (-1.0, 1.0)].iter().enumerate() {
            out[i] = (
                self.cx + a * self.half_length * fx + b * self.half_width * lx,
                self.cy + a * self.half_length * fy + b * self.half_width * ly,
            );
        }
        out
    }

    /// Separating-axis overlap test; touching edges do not count.
    pub fn overlaps(&self, other: &CollisionBox) -> bool {
        let ca = self.corners();
        let cb = other.corners();
        for (ax, ay) in self.axes().into_iter().chain(other.axes()) {
            let project = |cs: &[(f64, f64); 4]| {
                cs.iter().map(|(x, y)| x * ax + y * ay).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                    (lo.min(p), hi.max(p))
                })
            };
            let (a_lo, a_hi) = project(&ca);
            let (b_lo, b_hi) = project(&cb);
            if a_hi <= b_lo || b_hi <= a_lo {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone)]
pub struct DrivingEnv {
    cfg: DrivingConfig,
    grid: ActionGrid,
    seed: u64,
    rng: ChaCha8Rng,
    ego_x: f64,
    ego_y: f64,
    heading: f64,
    steering: f64,
    cars: Vec<Car>,
    steps: u64,
    crashes: u64,
}

impl DrivingEnv {
    pub fn new(cfg: DrivingConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let grid = discretize(-1.0, 1.0, cfg.n_actions)?;
        let mut env = Self {
            ego_x: cfg.lane_center(cfg.n_lanes / 2),
            cfg,
            grid,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ego_y: 0.0,
            heading: 0.0,
            steering: 0.0,
            cars: Vec::new(),
            steps: 0,
            crashes: 0,
        };
        env.reset(seed);
        Ok(env)
    }

    /// Places the ego and traffic exactly as described by `state`.
    pub fn from_state(cfg: DrivingConfig, state: &DrivingState, seed: u64) -> Result<Self> {
        let mut env = Self::new(cfg, seed)?;
        if state.neighbors.iter().filter(|n| !n.is_padding()).any(|n| !n.rel_x.is_finite() || !n.rel_y.is_finite()) {
            return Err(Error::InvalidInput("non-finite neighbor".into()));
        }
        env.ego_x = state.ego_x;
        env.ego_y = state.ego_y;
        env.heading = wrap_angle(state.heading);
        env.steering = state.steering_angle.clamp(-env.cfg.max_steering, env.cfg.max_steering);
        env.cars = state
            .neighbors
            .iter()
            .filter(|n| !n.is_padding())
            .map(|n| Car { x: state.ego_x + n.rel_x, y: state.ego_y + n.rel_y, speed: n.speed, desired_speed: n.speed })
            .collect();
        Ok(env)
    }

    pub fn config(&self) -> &DrivingConfig {
        &self.cfg
    }

    pub fn action_grid(&self) -> &ActionGrid {
        &self.grid
    }

    pub fn cars(&self) -> &[Car] {
        &self.cars
    }

    pub fn crashes(&self) -> u64 {
        self.crashes
    }

    pub fn state(&self) -> DrivingState {
        let k = self.cfg.k_neighbors;
        let mut near: Vec<(f64, Neighbor)> = self
            .cars
            .iter()
            .map(|c| {
                let n = Neighbor { rel_x: c.x - self.ego_x, rel_y: c.y - self.ego_y, rel_heading: -self.heading, speed: c.speed };
                (n.rel_x.hypot(n.rel_y), n)
            })
            .filter(|(d, _)| *d <= self.cfg.sensing_range)
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut neighbors: Vec<Neighbor> = near.into_iter().take(k).map(|(_, n)| n).collect();
        neighbors.resize(k, Neighbor::PADDING);
        DrivingState {
            lane_index: self.cfg.lane_of(self.ego_x),
            ego_x: self.ego_x,
            ego_y: self.ego_y,
            heading: self.heading,
            steering_angle: self.steering,
            neighbors,
        }
    }

    fn ego_box(&self) -> CollisionBox {
        CollisionBox {
            cx: self.ego_x,
            cy: self.ego_y,
            half_length: self.cfg.car_length / 2.0,
            half_width: self.cfg.car_width / 2.0,
            heading: self.heading,
        }
    }

    fn car_box(&self, car: &Car) -> CollisionBox {
        CollisionBox {
            cx: car.x,
            cy: car.y,
            half_length: self.cfg.car_length / 2.0,
            half_width: self.cfg.car_width / 2.0,
            heading: 0.0,
        }
    }

    pub fn collides(&self) -> bool {
        let ego = self.ego_box();
        self.cars.iter().any(|c| ego.overlaps(&self.car_box(c)))
    }

    pub fn off_road(&self) -> bool {
        self.ego_x < 0.0 || self.ego_x > self.cfg.road_width()
    }

    fn poisson(&mut self, mean: f64) -> usize {
        // Knuth's product method; means here are far below 1
        let limit = (-mean).exp();
        let mut k = 0;
        let mut p = self.rng.random::<f64>();
        while p > limit {
            k += 1;
            p *= self.rng.random::<f64>();
        }
        k
    }

    fn try_spawn(&mut self, y: f64) -> bool {
        let lane = self.rng.random_range(0..self.cfg.n_lanes);
        let (lo, hi) = self.cfg.traffic_speed;
        let speed = if hi > lo { self.rng.random_range(lo..hi) } else { lo };
        let car = Car { x: self.cfg.lane_center(lane), y, speed, desired_speed: speed };
        let candidate = CollisionBox { half_length: self.cfg.car_length, ..self.car_box(&car) };
        let blocked = self.cars.iter().any(|c| candidate.overlaps(&self.car_box(c)))
            || CollisionBox { half_length: self.cfg.car_length, ..self.ego_box() }.overlaps(&self.car_box(&car));
        if !blocked {
            self.cars.push(car);
        }
        !blocked
    }

    fn advance_traffic(&mut self) {
        let dt = self.cfg.dt;
        let follow_gap = 2.0 * self.cfg.car_length;
        let snapshot = self.cars.clone();
        for (i, car) in self.cars.iter_mut().enumerate() {
            let leader = snapshot
                .iter()
                .enumerate()
                .filter(|(j, o)| *j != i && (o.x - car.x).abs() < 1e-9 && o.y > car.y)
                .map(|(_, o)| o)
                .min_by(|a, b| a.y.total_cmp(&b.y));
            car.speed = match leader {
                Some(l) if l.y - car.y < follow_gap => car.desired_speed.min(l.speed),
                _ => car.desired_speed,
            };
        }
        for car in &mut self.cars {
            car.y += car.speed * dt;
        }
        let behind = self.ego_y - self.cfg.despawn_behind;
        self.cars.retain(|c| c.y >= behind);
        let arrivals = self.poisson(self.cfg.spawn_rate);
        for _ in 0..arrivals {
            let y = self.ego_y + self.cfg.spawn_distance;
            self.try_spawn(y);
        }
    }

    fn respawn(&mut self) {
        let lane = self.cfg.lane_of(self.ego_x.clamp(0.0, self.cfg.road_width()));
        self.ego_x = self.cfg.lane_center(lane);
        self.heading = 0.0;
        self.steering = 0.0;
        let (lo, hi) = (self.ego_y - 2.0 * self.cfg.car_length, self.ego_y + 4.0);
        self.cars.retain(|c| c.y < lo || c.y > hi);
    }

    fn proximity_penalty(&self) -> f64 {
        self.cars
            .iter()
            .map(|c| {
                let d = (c.x - self.ego_x).hypot(c.y - self.ego_y);
                (1.0 - d / self.cfg.safe_distance).max(0.0)
            })
            .fold(0.0, f64::max)
    }

    /// Applies a continuous steering command.
    pub fn step_continuous(&mut self, action: DrivingAction) -> Result<Transition> {
        let w = self.cfg.weights;
        let delta = action.steer_delta();
        self.steering = (self.steering + self.cfg.steer_scale * delta).clamp(-self.cfg.max_steering, self.cfg.max_steering);
        let pose = Pose { x: self.ego_y, y: self.ego_x, heading: self.heading };
        let progress = self.cfg.ego_speed * pose.heading.cos() * self.cfg.dt;
        let next = bicycle_step(pose, self.cfg.ego_speed, self.steering, self.cfg.dt, self.cfg.wheelbase)?;
        self.ego_y = next.x;
        self.ego_x = next.y;
        self.heading = next.heading;
        self.advance_traffic();
        self.steps += 1;

        let crashed = self.off_road() || self.collides();
        let lane_offset = self.ego_x - self.cfg.lane_center(self.cfg.lane_of(self.ego_x));
        let mut reward = w.forward * progress
            - w.proximity * self.proximity_penalty()
            - w.off_center * lane_offset.abs()
            - w.turn * self.heading.abs()
            - w.steer * delta.abs();
        if crashed {
            reward -= w.crash;
            self.crashes += 1;
            self.respawn();
        }
        Ok(Transition { observation: self.observation(), reward, done: false, crashed })
    }

    /// Replaces the traffic random stream; used to draw independent one-step samples.
    pub fn reseed_traffic(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }
}

impl Environment for DrivingEnv {
    fn name(&self) -> &'static str {
        "driving"
    }

    fn spec(&self) -> EnvSpec {
        EnvSpec {
            observation_dim: self.cfg.observation_dim(),
            action_set: ActionSet::Continuous { low: -1.0, high: 1.0, n: self.grid.n },
            step_limit: self.cfg.step_limit,
            seed: self.seed,
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.seed = seed;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.ego_x = self.cfg.lane_center(self.cfg.n_lanes / 2);
        self.ego_y = 0.0;
        self.heading = 0.0;
        self.steering = 0.0;
        self.cars.clear();
        self.steps = 0;
        self.crashes = 0;
        for _ in 0..self.cfg.initial_cars {
            let y = self.rng.random_range(3.0..self.cfg.spawn_distance);
            self.try_spawn(y);
        }
        self.observation()
    }

    fn observation(&self) -> Vec<f64> {
        self.state().observation(self.cfg.sensing_range)
    }

    fn step(&mut self, action: usize) -> Result<Transition> {
        let delta = self
            .grid
            .value(action)
            .ok_or_else(|| Error::InvalidInput(format!("action {action} outside grid of {}", self.grid.n)))?;
        self.step_continuous(DrivingAction::new(delta))
    }

    fn scene(&self) -> Scene {
        let road = self.cfg.road_width();
        let view = 12.0;
        let y0 = self.ego_y - 3.0;
        let mut entities = vec![Entity::rect("road", road / 2.0, self.ego_y + 3.0, road, view, 0.0, Color::ROAD)];
        for lane in 1..self.cfg.n_lanes {
            let x = lane as f64 * self.cfg.lane_width;
            let mut y = (y0 / 1.0).floor();
            while y < y0 + view {
                entities.push(Entity::rect("marking", x, y + 0.25, 0.04, 0.5, 0.0, Color::MARKING));
                y += 1.0;
            }
        }
        for c in &self.cars {
            entities.push(Entity::rect("car", c.x, c.y, self.cfg.car_width, self.cfg.car_length, 0.0, Color::TRAFFIC));
        }
        entities.push(Entity::rect(
            "ego",
            self.ego_x,
            self.ego_y,
            self.cfg.car_width,
            self.cfg.car_length,
            self.heading,
            Color::EGO,
        ));
        Scene::new("driving", (road / 2.0 - view / 2.0, y0), (road / 2.0 + view / 2.0, y0 + view), entities)
    }

    fn state_json(&self) -> serde_json::Value {
        serde_json::to_value(self.state()).unwrap_or(serde_json::Value::Null)
    }

    /// A car close ahead in the ego's corridor, or the ego hugging a road edge.
    fn oracle_critical(&self) -> bool {
        driving_oracle_critical(&self.state(), &self.cfg)
    }

    fn action_label(&self, action: usize) -> String {
        match self.grid.value(action) {
            Some(v) => format!("steer {v:+.3}"),
            None => format!("invalid {action}"),
        }
    }

    fn clone_box(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}

/// Scripted stand-in for a human's judgement of driving criticality.
pub fn driving_oracle_critical(state: &DrivingState, cfg: &DrivingConfig) -> bool {
    let corridor = (cfg.lane_width + cfg.car_width) / 2.0;
    let car_ahead = state
        .neighbors
        .iter()
        .any(|n| !n.is_padding() && n.rel_x.abs() < corridor && n.rel_y > 0.0 && n.rel_y < 3.0);
    let edge_margin = 0.25 * cfg.lane_width;
    car_ahead || state.ego_x < edge_margin || state.ego_x > cfg.road_width() - edge_margin
}

/// One-step simulator over full driving worlds.
#[derive(Debug, Clone, Copy)]
pub struct DrivingModel {
    pub discount: f64,
    pub n_actions: usize,
}

impl OneStepModel for DrivingModel {
    type State = DrivingEnv;

    fn discount(&self) -> f64 {
        self.discount
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn simulate(&self, state: &DrivingEnv, action: usize, sample: u64) -> Result<Vec<Outcome<DrivingEnv>>> {
        let mut next = state.clone();
        if sample > 0 {
            next.reseed_traffic(state.seed ^ sample.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        }
        let t = next.step(action)?;
        Ok(vec![Outcome { weight: 1.0, next, reward: t.reward }])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_road() -> DrivingConfig {
        DrivingConfig { spawn_rate: 0.0, initial_cars: 0, ..DrivingConfig::default() }
    }

    #[test]
    fn straight_line_motion() {
        let p = bicycle_step(Pose { x: 0.0, y: 0.0, heading: 0.0 }, 1.0, 0.0, 0.1, 1.0).unwrap();
        assert_eq!(p, Pose { x: 0.1, y: 0.0, heading: 0.0 });
    }

    #[test]
    fn zero_speed_keeps_pose() {
        let start = Pose { x: 1.5, y: -2.0, heading: 0.7 };
        for steer in [-1.2, 0.0, 0.3, 1.5] {
            assert_eq!(bicycle_step(start, 0.0, steer, 0.1, 0.5).unwrap(), start);
        }
    }

    #[test]
    fn rejects_singular_steering() {
        let p = Pose { x: 0.0, y: 0.0, heading: 0.0 };
        assert!(bicycle_step(p, 1.0, PI / 2.0, 0.1, 1.0).is_err());
        assert!(bicycle_step(p, 1.0, 0.1, 0.0, 1.0).is_err());
        assert!(bicycle_step(p, 1.0, 0.1, 0.1, 0.0).is_err());
    }

    #[test]
    fn constant_steering_traces_a_circle() {
        let delta: f64 = 0.2;
        let radius = 1.0 / delta.tan();
        let mut p = Pose { x: 0.0, y: 0.0, heading: 0.0 };
        for _ in 0..10_000 {
            p = bicycle_step(p, 1.0, delta, 1e-4, 1.0).unwrap();
        }
        assert!((p.heading - delta.tan()).abs() < 1e-9);
        // closed-form arc: center at (0, R)
        let r = p.x.hypot(p.y - radius);
        assert!((r - radius).abs() < 1e-3, "radius {r} vs {radius}");
        let arc = (radius * p.heading.sin(), radius * (1.0 - p.heading.cos()));
        assert!((p.x - arc.0).abs() < 1e-3 && (p.y - arc.1).abs() < 1e-3);
    }

    #[test]
    fn heading_wraps_into_half_open_interval() {
        assert_eq!(wrap_angle(-PI), PI);
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn empty_road_reward_is_pure_progress() {
        let cfg = empty_road();
        let mut env = DrivingEnv::new(cfg.clone(), 3).unwrap();
        // an even grid never contains 0 exactly, so drive the continuous command
        let t = env.step_continuous(DrivingAction::new(0.0)).unwrap();
        assert_eq!(t.reward, cfg.weights.forward * cfg.ego_speed * cfg.dt);
        assert!(!t.crashed);
        for _ in 0..500 {
            env.step_continuous(DrivingAction::new(0.0)).unwrap();
            let s = env.state();
            assert_eq!(s.heading, 0.0);
            assert_eq!(s.ego_x - cfg.lane_center(s.lane_index), 0.0);
        }
    }

    #[test]
    fn overlapping_car_crashes() {
        let cfg = empty_road();
        let state = DrivingState {
            lane_index: 1,
            ego_x: 1.5,
            ego_y: 0.0,
            heading: 0.0,
            steering_angle: 0.0,
            neighbors: vec![Neighbor { rel_x: 0.0, rel_y: 0.2, rel_heading: 0.0, speed: 0.5 }],
        };
        let mut env = DrivingEnv::from_state(cfg.clone(), &state, 1).unwrap();
        let t = env.step_continuous(DrivingAction::new(0.0)).unwrap();
        assert!(t.crashed);
        assert!(t.reward <= -cfg.weights.crash + cfg.weights.forward * 0.1);
        assert_eq!(env.crashes(), 1);
        assert!(!env.collides(), "respawn clears the stretch");
    }

    #[test]
    fn leaving_the_road_crashes() {
        let cfg = empty_road();
        let mut env = DrivingEnv::new(cfg, 0).unwrap();
        let mut crashed = false;
        for _ in 0..200 {
            crashed |= env.step_continuous(DrivingAction::new(1.0)).unwrap().crashed;
        }
        assert!(crashed);
    }

    #[test]
    fn collision_is_symmetric() {
        let a = CollisionBox { cx: 0.0, cy: 0.0, half_length: 0.4, half_width: 0.25, heading: 0.3 };
        for (dx, dy, h) in [(0.3, 0.5, 0.0), (0.6, 0.0, 1.0), (0.0, 0.85, 0.0), (0.49, 0.7, -0.4)] {
            let b = CollisionBox { cx: dx, cy: dy, half_length: 0.4, half_width: 0.25, heading: h };
            assert_eq!(a.overlaps(&b), b.overlaps(&a));
        }
    }

    #[test]
    fn observation_shape_and_padding() {
        let env = DrivingEnv::new(empty_road(), 0).unwrap();
        let s = env.state();
        assert_eq!(s.neighbors.len(), 4);
        assert!(s.neighbors.iter().all(Neighbor::is_padding));
        let obs = env.observation();
        assert_eq!(obs.len(), 3 + 1 + 4 * 4);
        assert!(obs.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn seeded_runs_replay_bit_exactly() {
        let run = || {
            let mut env = DrivingEnv::new(DrivingConfig::default(), 7).unwrap();
            (0..100)
                .map(|_| {
                    env.step_continuous(DrivingAction::new(0.0)).unwrap();
                    env.state()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn action_is_clipped() {
        assert_eq!(DrivingAction::new(3.0).steer_delta(), 1.0);
        assert_eq!(DrivingAction::new(-3.0).steer_delta(), -1.0);
        assert_eq!(DrivingAction::new(f64::NAN).steer_delta(), 0.0);
    }

    #[test]
    fn grid_index_out_of_range_is_rejected() {
        let mut env = DrivingEnv::new(empty_road(), 0).unwrap();
        assert!(env.step(200).is_err());
        assert!(env.step(199).is_ok());
    }
}
