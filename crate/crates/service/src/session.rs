//! Live supervised rollouts: control hand-over, per-step annotation,
//! intervention classification and the append-only event log.
//!
//! An intervention is attributed to the state the session is in when the
//! command arrives, i.e. the state the human-chosen action is applied to.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use critstates::criticality::{resolve_threshold, score_output, CriticalityMethod, CriticalityThreshold, EntropyOptions};
use critstates::envs::Environment;
use critstates::policy::Policy;
use critstates::render::Scene;
use critstates::rollout::RolloutDriver;
use critstates::selection::collect_states;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

pub const EVENT_SCHEMA_VERSION: u32 = 1;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Watch only; take-control commands are rejected.
    Observe,
    #[default]
    Supervise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    Policy,
    Human,
}

/// Human input for one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    #[default]
    None,
    /// Take (or keep) control and apply `action` from this step on.
    TakeControl { action: usize },
    Release,
}

/// Where a human takeover lands relative to the policy's critical set and the oracle's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Case {
    /// The oracle does not consider the state critical.
    NotCritical = 1,
    /// Critical for both the oracle and the policy's own scores.
    Flagged = 2,
    /// Critical for the oracle but missed by the policy's scores.
    Missed = 3,
}

impl From<Case> for u8 {
    fn from(c: Case) -> u8 {
        c as u8
    }
}

impl TryFrom<u8> for Case {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Case::NotCritical),
            2 => Ok(Case::Flagged),
            3 => Ok(Case::Missed),
            other => Err(format!("intervention case {other} is not 1, 2 or 3")),
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", *self as u8)
    }
}

pub fn classify_intervention(in_c_pi: bool, in_oracle: bool) -> Case {
    match (in_oracle, in_c_pi) {
        (false, _) => Case::NotCritical,
        (true, true) => Case::Flagged,
        (true, false) => Case::Missed,
    }
}

/// Stand-in for the set of states the human considers critical.
#[derive(Clone)]
pub enum Oracle {
    /// The environment's own hand-written rule.
    Scripted,
    /// A reference policy's scores at or above `cutoff`.
    Reference { policy: Arc<dyn Policy>, method: CriticalityMethod, entropy: EntropyOptions, cutoff: f64 },
}

impl Oracle {
    pub fn describe(&self) -> OracleInfo {
        match self {
            Oracle::Scripted => OracleInfo::Scripted,
            Oracle::Reference { policy, method, cutoff, .. } => {
                OracleInfo::Reference { policy_hash: policy.id(), method: *method, cutoff: *cutoff }
            }
        }
    }

    pub fn is_critical(&self, env: &dyn Environment) -> Result<bool> {
        match self {
            Oracle::Scripted => Ok(env.oracle_critical()),
            Oracle::Reference { policy, method, entropy, cutoff } => {
                let out = policy.evaluate(&env.observation())?;
                Ok(score_output(&out, *method, *entropy)? >= *cutoff)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleInfo {
    Scripted,
    Reference { policy_hash: String, method: CriticalityMethod, cutoff: f64 },
}

/// Absolute score cutoff from a calibration rollout of `steps` policy steps.
pub fn calibrate_cutoff(
    env: Box<dyn Environment>,
    policy: &dyn Policy,
    method: CriticalityMethod,
    entropy: EntropyOptions,
    threshold: CriticalityThreshold,
    steps: usize,
    seed: u64,
) -> Result<f64> {
    let buffer = collect_states(env, policy, steps, seed, method, entropy)?;
    Ok(resolve_threshold(&buffer.scores, threshold)?)
}

pub struct SessionConfig {
    pub mode: Mode,
    pub seed: u64,
    pub method: CriticalityMethod,
    pub entropy: EntropyOptions,
    /// Absolute cutoff on the policy's scores defining its critical set.
    pub cutoff: f64,
    pub oracle: Oracle,
    /// Include the oracle flag in frames sent to the client.
    pub reveal_oracle: bool,
}

/// Criticality of the state the session is currently in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub score: f64,
    pub in_c_pi: bool,
    pub in_oracle: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionRecord {
    pub step: u64,
    pub state: serde_json::Value,
    pub human_action: usize,
    pub policy_action: usize,
    pub in_c_pi: bool,
    pub in_oracle: bool,
    pub case: Case,
}

/// What happened on one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub controller: Controller,
    pub applied_action: usize,
    pub policy_action: usize,
    pub score: f64,
    pub in_c_pi: bool,
    pub in_oracle: bool,
    pub reward: f64,
    pub crashed: bool,
    pub episode_ended: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Started {
        version: u32,
        session: String,
        policy_hash: String,
        env: String,
        mode: Mode,
        seed: u64,
        method: CriticalityMethod,
        cutoff: f64,
        oracle: OracleInfo,
    },
    Command { step: u64, command: Command },
    Step(StepRecord),
    Intervention(InterventionRecord),
    Ended { steps: u64 },
}

/// Frame payload describing the state the session is waiting in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub session: String,
    pub step: u64,
    /// Relative URL of the rendered PNG.
    pub frame: String,
    pub score: f64,
    pub in_c_pi: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_oracle: Option<bool>,
    pub controller: Controller,
    pub live: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub last: StepRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervention: Option<InterventionRecord>,
    pub frame: Frame,
}

pub struct Session {
    id: String,
    policy: Arc<dyn Policy>,
    driver: RolloutDriver,
    cfg: SessionConfig,
    controller: Controller,
    pending_action: Option<usize>,
    current: Annotation,
    live: bool,
    /// Rendered state before each step, plus the state the session waits in.
    scenes: Vec<Scene>,
    events: Vec<Event>,
    log: Option<File>,
}

impl Session {
    pub fn start(id: String, policy: Arc<dyn Policy>, env: Box<dyn Environment>, cfg: SessionConfig) -> Result<Self> {
        if env.n_actions() != policy.n_actions() {
            return Err(ServiceError::BadRequest(format!(
                "policy has {} actions but env {} has {}",
                policy.n_actions(),
                env.name(),
                env.n_actions()
            )));
        }
        let env_name = env.name().to_string();
        let driver = RolloutDriver::new(env, cfg.seed);
        let started = Event::Started {
            version: EVENT_SCHEMA_VERSION,
            session: id.clone(),
            policy_hash: policy.id(),
            env: env_name,
            mode: cfg.mode,
            seed: cfg.seed,
            method: cfg.method,
            cutoff: cfg.cutoff,
            oracle: cfg.oracle.describe(),
        };
        let mut s = Self {
            id,
            policy,
            driver,
            cfg,
            controller: Controller::Policy,
            pending_action: None,
            current: Annotation { score: 0.0, in_c_pi: false, in_oracle: false },
            live: true,
            scenes: Vec::new(),
            events: Vec::new(),
            log: None,
        };
        s.current = s.annotate()?;
        s.scenes.push(s.driver.env().scene());
        s.push(started)?;
        Ok(s)
    }

    /// Starts persisting events as JSON lines; already recorded events are written first.
    pub fn persist_to(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = File::create(path)?;
        for e in &self.events {
            writeln!(f, "{}", serde_json::to_string(e)?)?;
        }
        f.flush()?;
        self.log = Some(f);
        Ok(())
    }

    fn push(&mut self, e: Event) -> Result<()> {
        if let Some(f) = &mut self.log {
            writeln!(f, "{}", serde_json::to_string(&e)?)?;
            f.flush()?;
        }
        self.events.push(e);
        Ok(())
    }

    fn annotate(&self) -> Result<Annotation> {
        let env = self.driver.env();
        let out = self.policy.evaluate(&env.observation())?;
        let score = score_output(&out, self.cfg.method, self.cfg.entropy)?;
        Ok(Annotation { score, in_c_pi: score >= self.cfg.cutoff, in_oracle: self.cfg.oracle.is_critical(env)? })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn policy_hash(&self) -> String {
        self.policy.id()
    }

    pub fn env(&self) -> &dyn Environment {
        self.driver.env()
    }

    pub fn step_index(&self) -> u64 {
        self.driver.step_index()
    }

    pub fn controller(&self) -> Controller {
        self.controller
    }

    pub fn mode(&self) -> Mode {
        self.cfg.mode
    }

    pub fn cutoff(&self) -> f64 {
        self.cfg.cutoff
    }

    pub fn annotation(&self) -> Annotation {
        self.current
    }

    pub fn is_live(&self) -> bool {
        self.live
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Copy of the underlying rollout driver, for replaying what the policy alone would do.
    pub fn driver(&self) -> &RolloutDriver {
        &self.driver
    }

    /// Scene of the state before step `step`.
    pub fn scene(&self, step: u64) -> Option<&Scene> {
        self.scenes.get(usize::try_from(step).ok()?)
    }

    pub fn frame(&self) -> Frame {
        let step = self.driver.step_index();
        Frame {
            session: self.id.clone(),
            step,
            frame: format!("/sessions/{}/frames/{step}", self.id),
            score: self.current.score,
            in_c_pi: self.current.in_c_pi,
            in_oracle: self.cfg.reveal_oracle.then_some(self.current.in_oracle),
            controller: self.controller,
            live: self.live,
        }
    }

    /// Applies `command`, advances one step and returns the new frame.
    /// Rejected commands leave the session unchanged.
    pub fn step(&mut self, command: Command) -> Result<StepOutcome> {
        if !self.live {
            return Err(ServiceError::Closed(self.id.clone()));
        }
        if let Command::TakeControl { action } = command {
            if self.cfg.mode == Mode::Observe {
                return Err(ServiceError::BadRequest("session is in observe mode".into()));
            }
            let n = self.driver.env().n_actions();
            if action >= n {
                return Err(ServiceError::BadRequest(format!("action {action} outside the action set of {n}")));
            }
        }
        let step = self.driver.step_index();
        let state = self.driver.env().state_json();
        let before = self.current;
        let override_action = match command {
            Command::TakeControl { action } => Some(action),
            Command::Release => None,
            Command::None => self.pending_action,
        };
        let s = self.driver.step(self.policy.as_ref(), override_action)?;
        if command != Command::None {
            self.push(Event::Command { step, command })?;
        }
        self.pending_action = override_action;
        self.controller = if override_action.is_some() { Controller::Human } else { Controller::Policy };
        let last = StepRecord {
            step,
            controller: self.controller,
            applied_action: s.applied_action,
            policy_action: s.policy_action,
            score: before.score,
            in_c_pi: before.in_c_pi,
            in_oracle: before.in_oracle,
            reward: s.transition.reward,
            crashed: s.transition.crashed,
            episode_ended: s.episode_ended,
        };
        self.push(Event::Step(last.clone()))?;
        let intervention = match override_action {
            Some(human_action) => {
                let rec = InterventionRecord {
                    step,
                    state,
                    human_action,
                    policy_action: s.policy_action,
                    in_c_pi: before.in_c_pi,
                    in_oracle: before.in_oracle,
                    case: classify_intervention(before.in_c_pi, before.in_oracle),
                };
                self.push(Event::Intervention(rec.clone()))?;
                Some(rec)
            }
            None => None,
        };
        self.current = self.annotate()?;
        self.scenes.push(self.driver.env().scene());
        Ok(StepOutcome { last, intervention, frame: self.frame() })
    }

    pub fn end(&mut self) -> Result<()> {
        if !self.live {
            return Err(ServiceError::Closed(self.id.clone()));
        }
        self.push(Event::Ended { steps: self.driver.step_index() })?;
        self.live = false;
        Ok(())
    }

    pub fn report(&self) -> Result<SessionReport> {
        if self.live {
            return Err(ServiceError::Live(self.id.clone()));
        }
        SessionReport::from_events(&self.events)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseCounts {
    pub case_1: usize,
    pub case_2: usize,
    pub case_3: usize,
}

impl CaseCounts {
    pub fn total(&self) -> usize {
        self.case_1 + self.case_2 + self.case_3
    }

    fn add(&mut self, c: Case) {
        match c {
            Case::NotCritical => self.case_1 += 1,
            Case::Flagged => self.case_2 += 1,
            Case::Missed => self.case_3 += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub version: u32,
    pub session: String,
    pub policy_hash: String,
    pub env: String,
    pub total_steps: u64,
    pub interventions: Vec<InterventionRecord>,
    pub counts: CaseCounts,
    pub oracle_critical_steps: u64,
    pub non_critical_steps: u64,
    /// Fraction of oracle-critical steps under human control.
    pub takeover_rate_critical: f64,
    /// Fraction of the other steps under human control.
    pub takeover_rate_non_critical: f64,
    pub human_steps: u64,
    pub crashes_policy_control: u64,
    pub crashes_human_control: u64,
}

impl SessionReport {
    /// Rebuilds the report from an event log; the log must contain its end event.
    pub fn from_events(events: &[Event]) -> Result<Self> {
        let Some(Event::Started { session, policy_hash, env, .. }) = events.first() else {
            return Err(ServiceError::BadRequest("event log does not begin with a start event".into()));
        };
        let mut r = SessionReport {
            version: REPORT_SCHEMA_VERSION,
            session: session.clone(),
            policy_hash: policy_hash.clone(),
            env: env.clone(),
            total_steps: 0,
            interventions: Vec::new(),
            counts: CaseCounts::default(),
            oracle_critical_steps: 0,
            non_critical_steps: 0,
            takeover_rate_critical: 0.0,
            takeover_rate_non_critical: 0.0,
            human_steps: 0,
            crashes_policy_control: 0,
            crashes_human_control: 0,
        };
        let (mut human_critical, mut human_other) = (0u64, 0u64);
        let mut ended = false;
        for e in &events[1..] {
            match e {
                Event::Step(s) => {
                    r.total_steps += 1;
                    let human = s.controller == Controller::Human;
                    if s.in_oracle {
                        r.oracle_critical_steps += 1;
                        human_critical += u64::from(human);
                    } else {
                        r.non_critical_steps += 1;
                        human_other += u64::from(human);
                    }
                    r.human_steps += u64::from(human);
                    if s.crashed {
                        if human {
                            r.crashes_human_control += 1;
                        } else {
                            r.crashes_policy_control += 1;
                        }
                    }
                }
                Event::Intervention(rec) => {
                    r.counts.add(rec.case);
                    r.interventions.push(rec.clone());
                }
                Event::Ended { .. } => ended = true,
                Event::Command { .. } | Event::Started { .. } => {}
            }
        }
        if !ended {
            return Err(ServiceError::Live(r.session));
        }
        let rate = |hits: u64, n: u64| if n == 0 { 0.0 } else { hits as f64 / n as f64 };
        r.takeover_rate_critical = rate(human_critical, r.oracle_critical_steps);
        r.takeover_rate_non_critical = rate(human_other, r.non_critical_steps);
        Ok(r)
    }
}

/// Reads a JSON-lines event log.
pub fn read_event_log(path: impl AsRef<Path>) -> Result<Vec<Event>> {
    let mut out = Vec::new();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
