//! Exposure artifacts shown to a user before deployment: critical-state
//! decks, random-state decks, timed rollout recordings, and hand-edited
//! decks for manipulated conditions.
//!
//! A deck directory holds `deck.json` plus `frames/{index}.png`; a recording
//! directory holds `recording.json` plus `frames/{step}.png`. Both are
//! identified by the SHA-256 of their JSON document with the id and
//! timestamp blanked.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::criticality::{resolve_threshold, score_output, CriticalityMethod};
use crate::envs::fixtures::QueryState;
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::mdp::ActionDistribution;
use crate::policy::Policy;
use crate::render::Scene;
use crate::rollout::{derive_seed, RolloutDriver};
use crate::selection::{collect_states, run_pipeline, PipelineConfig, PipelineResult, StateBuffer};

pub const DECK_SCHEMA_VERSION: u32 = 1;
pub const RECORDING_SCHEMA_VERSION: u32 = 1;
/// Rendering rate of recordings; one minute is 600 steps.
pub const STEPS_PER_SECOND: u32 = 10;

/// Marks an entry whose content did not come straight from the policy's own rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryAnnotation {
    /// The displayed action was replaced and does not reflect the policy.
    pub synthetic_action: bool,
    /// The state was inserted by an edit rather than selected.
    pub injected: bool,
    /// What the policy itself would display here.
    pub policy_action: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeckEntry {
    /// Relative path of the rendered frame inside the deck directory.
    pub frame: String,
    pub observation: Vec<f64>,
    /// Environment state snapshot the entry was rendered from.
    pub state: serde_json::Value,
    pub scene: Scene,
    pub displayed_action: usize,
    pub action_label: String,
    pub distribution: ActionDistribution,
    pub score: f64,
    /// `score` reaches the deck's cutoff.
    pub above_threshold: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<usize>,
    /// Row of the rollout buffer the state came from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_row: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<EntryAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeckKind {
    Critical,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeckProvenance {
    pub pipeline: PipelineConfig,
    /// Seed of the uniform draw for random decks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_seed: Option<u64>,
    /// Deck this one was edited from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(default)]
    pub edits: Vec<DeckEdit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalStateDeck {
    pub version: u32,
    pub id: String,
    pub policy_hash: String,
    pub env: String,
    pub kind: DeckKind,
    /// `"value_based"`, `"entropy_based"`, or `"random"` for baseline decks.
    pub method: String,
    /// Method used for the per-entry scores.
    pub score_method: CriticalityMethod,
    /// Absolute score cutoff resolved on the rollout buffer.
    pub cutoff: f64,
    pub n_actions: usize,
    pub provenance: DeckProvenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
    pub entries: Vec<DeckEntry>,
}

fn content_hash<T: Serialize>(value: &T) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(value)?)))
}

impl CriticalStateDeck {
    /// Sorts entries, renumbers frames and recomputes the id.
    fn seal(mut self) -> Result<Self> {
        // stable: equal scores keep their selection order
        self.entries.sort_by(|a, b| b.score.total_cmp(&a.score));
        for (i, e) in self.entries.iter_mut().enumerate() {
            e.frame = format!("frames/{i}.png");
        }
        self.id = self.compute_id()?;
        Ok(self)
    }

    pub fn compute_id(&self) -> Result<String> {
        let blank = Self { id: String::new(), created_at: None, ..self.clone() };
        content_hash(&blank)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Checks ordering, argmax consistency and the content hash.
    pub fn validate(&self) -> Result<()> {
        if self.entries.windows(2).any(|w| w[0].score < w[1].score) {
            return Err(Error::InvalidInput("deck entries are not sorted by descending score".into()));
        }
        for (i, e) in self.entries.iter().enumerate() {
            let synthetic = e.annotation.as_ref().is_some_and(|a| a.synthetic_action);
            if !synthetic && e.displayed_action != e.distribution.argmax() {
                return Err(Error::InvalidInput(format!("entry {i} displays a non-argmax action without an override")));
            }
            if e.displayed_action >= self.n_actions {
                return Err(Error::InvalidInput(format!("entry {i} displays action outside the action set")));
            }
        }
        let id = self.compute_id()?;
        if id != self.id {
            return Err(Error::InvalidInput(format!("deck id {} does not match content hash {id}", self.id)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let deck: Self = serde_json::from_str(s)?;
        if deck.version != DECK_SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!("unsupported deck schema version {}", deck.version)));
        }
        Ok(deck)
    }

    /// Writes `deck.json` and one PNG per entry.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir.join("frames"))?;
        for e in &self.entries {
            e.scene.write_png(dir.join(&e.frame))?;
        }
        std::fs::write(dir.join("deck.json"), self.to_json()?)?;
        Ok(())
    }

    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(dir.as_ref().join("deck.json"))?)
    }
}

fn entry_at(buffer: &StateBuffer, row: usize, policy: &dyn Policy, env: &dyn Environment, cutoff: f64) -> Result<DeckEntry> {
    let observation = buffer.observations[row].clone();
    let distribution = policy.distribution(&observation)?;
    let displayed_action = distribution.argmax();
    Ok(DeckEntry {
        frame: String::new(),
        observation,
        state: buffer.states.get(row).cloned().unwrap_or(serde_json::Value::Null),
        scene: buffer
            .scenes
            .get(row)
            .cloned()
            .ok_or_else(|| Error::InvalidInput(format!("buffer row {row} has no rendered scene")))?,
        displayed_action,
        action_label: env.action_label(displayed_action),
        distribution,
        score: buffer.scores[row],
        above_threshold: buffer.scores[row] >= cutoff,
        cluster: None,
        source_row: Some(row),
        annotation: None,
    })
}

/// Deck of the pipeline's representatives.
pub fn critical_deck_from_result(
    result: &PipelineResult,
    policy: &dyn Policy,
    env: &dyn Environment,
    cfg: &PipelineConfig,
) -> Result<CriticalStateDeck> {
    let entries = result
        .representatives
        .iter()
        .map(|r| {
            let mut e = entry_at(&result.buffer, r.index, policy, env, result.cutoff)?;
            e.cluster = Some(r.cluster);
            Ok(e)
        })
        .collect::<Result<Vec<_>>>()?;
    CriticalStateDeck {
        version: DECK_SCHEMA_VERSION,
        id: String::new(),
        policy_hash: policy.id(),
        env: env.name().to_string(),
        kind: DeckKind::Critical,
        method: cfg.method.to_string(),
        score_method: cfg.method,
        cutoff: result.cutoff,
        n_actions: policy.n_actions(),
        provenance: DeckProvenance { pipeline: cfg.clone(), sample_seed: None, parent: None, edits: Vec::new() },
        created_at: None,
        entries,
    }
    .seal()
}

/// Runs the selection pipeline and packages its representatives.
pub fn build_critical_deck(policy: &dyn Policy, env: Box<dyn Environment>, cfg: &PipelineConfig) -> Result<CriticalStateDeck> {
    let probe = env.clone_box();
    let result = run_pipeline(env, policy, cfg)?;
    critical_deck_from_result(&result, policy, probe.as_ref(), cfg)
}

/// `k` rows drawn uniformly without replacement, scored but not filtered.
pub fn random_deck_from_buffer(
    buffer: &StateBuffer,
    policy: &dyn Policy,
    env: &dyn Environment,
    cfg: &PipelineConfig,
    sample_seed: u64,
) -> Result<CriticalStateDeck> {
    if cfg.k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    if buffer.is_empty() {
        return Err(Error::InvalidInput("cannot sample from an empty buffer".into()));
    }
    let cutoff = resolve_threshold(&buffer.scores, cfg.threshold)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(sample_seed, 0));
    let rows = rand::seq::index::sample(&mut rng, buffer.len(), cfg.k.min(buffer.len())).into_vec();
    let entries = rows.into_iter().map(|row| entry_at(buffer, row, policy, env, cutoff)).collect::<Result<Vec<_>>>()?;
    CriticalStateDeck {
        version: DECK_SCHEMA_VERSION,
        id: String::new(),
        policy_hash: policy.id(),
        env: env.name().to_string(),
        kind: DeckKind::Random,
        method: "random".into(),
        score_method: buffer.method,
        cutoff,
        n_actions: policy.n_actions(),
        provenance: DeckProvenance { pipeline: cfg.clone(), sample_seed: Some(sample_seed), parent: None, edits: Vec::new() },
        created_at: None,
        entries,
    }
    .seal()
}

/// Baseline deck: `cfg.k` uniformly chosen states from a fresh rollout of `cfg.steps` steps.
pub fn build_random_deck(
    policy: &dyn Policy,
    env: Box<dyn Environment>,
    cfg: &PipelineConfig,
    sample_seed: u64,
) -> Result<CriticalStateDeck> {
    if cfg.k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let probe = env.clone_box();
    let buffer = collect_states(env, policy, cfg.steps, cfg.rollout_seed, cfg.method, cfg.entropy)?;
    random_deck_from_buffer(&buffer, policy, probe.as_ref(), cfg, sample_seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeckInjection {
    pub state: QueryState,
    /// Action to display; the policy's argmax when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub displayed_action: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionOverride {
    pub index: usize,
    pub action: usize,
}

/// Edit script. Indices refer to the input deck; overrides apply first,
/// then removals, then injections.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeckEdit {
    pub removals: Vec<usize>,
    pub injections: Vec<DeckInjection>,
    pub overrides: Vec<ActionOverride>,
}

/// Applies an edit script. Injected states are scored and rendered with
/// `policy`; the edited deck is re-sorted by score.
pub fn edit_deck(deck: &CriticalStateDeck, edits: &DeckEdit, policy: &dyn Policy) -> Result<CriticalStateDeck> {
    let n = deck.entries.len();
    let mut removed = vec![false; n];
    for &i in &edits.removals {
        if i >= n {
            return Err(Error::InvalidInput(format!("removal index {i} outside deck of {n}")));
        }
        if std::mem::replace(&mut removed[i], true) {
            return Err(Error::InvalidInput(format!("entry {i} removed twice")));
        }
    }
    let mut entries = deck.entries.clone();
    for o in &edits.overrides {
        if o.index >= n {
            return Err(Error::InvalidInput(format!("override index {} outside deck of {n}", o.index)));
        }
        if removed[o.index] {
            return Err(Error::InvalidInput(format!("entry {} is both removed and overridden", o.index)));
        }
        if o.action >= deck.n_actions {
            return Err(Error::InvalidInput(format!("override action {} outside the action set of {}", o.action, deck.n_actions)));
        }
        let e = &mut entries[o.index];
        let policy_action = e.annotation.as_ref().map_or(e.distribution.argmax(), |a| a.policy_action);
        let injected = e.annotation.as_ref().is_some_and(|a| a.injected);
        e.displayed_action = o.action;
        e.action_label = deck_action_label(&deck.env, o.action);
        e.annotation = Some(EntryAnnotation { synthetic_action: true, injected, policy_action });
    }
    let mut kept: Vec<DeckEntry> = entries.into_iter().zip(removed).filter(|(_, r)| !r).map(|(e, _)| e).collect();

    for inj in &edits.injections {
        if inj.state.env_name() != deck.env {
            return Err(Error::InvalidInput(format!("cannot inject a {} state into a {} deck", inj.state.env_name(), deck.env)));
        }
        let env = inj.state.build_env(0)?;
        let observation = env.observation();
        let output = policy.evaluate(&observation)?;
        let score = score_output(&output, deck.score_method, deck.provenance.pipeline.entropy)?;
        let policy_action = output.distribution.argmax();
        let displayed_action = inj.displayed_action.unwrap_or(policy_action);
        if displayed_action >= deck.n_actions {
            return Err(Error::InvalidInput(format!("injected action {displayed_action} outside the action set")));
        }
        kept.push(DeckEntry {
            frame: String::new(),
            observation,
            state: env.state_json(),
            scene: env.scene(),
            displayed_action,
            action_label: env.action_label(displayed_action),
            distribution: output.distribution,
            score,
            above_threshold: score >= deck.cutoff,
            cluster: None,
            source_row: None,
            annotation: Some(EntryAnnotation {
                synthetic_action: displayed_action != policy_action,
                injected: true,
                policy_action,
            }),
        });
    }

    let mut provenance = deck.provenance.clone();
    provenance.parent = Some(deck.id.clone());
    provenance.edits.push(edits.clone());
    CriticalStateDeck { entries: kept, provenance, created_at: None, ..deck.clone() }.seal()
}

fn deck_action_label(env: &str, action: usize) -> String {
    crate::envs::make_env(env, 0).map_or_else(|_| action.to_string(), |e| e.action_label(action))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecording {
    pub version: u32,
    pub id: String,
    pub policy_hash: String,
    pub env: String,
    pub seed: u64,
    pub duration_steps: usize,
    pub steps_per_second: u32,
    /// Frame shown at each step, before the step's action is applied.
    pub frames: Vec<String>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub crashes: Vec<bool>,
    #[serde(skip)]
    pub scenes: Vec<Scene>,
}

impl RolloutRecording {
    pub fn compute_id(&self) -> Result<String> {
        content_hash(&Self { id: String::new(), scenes: Vec::new(), ..self.clone() })
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        if self.scenes.len() != self.frames.len() {
            return Err(Error::InvalidInput("recording has no scenes to render".into()));
        }
        std::fs::create_dir_all(dir.join("frames"))?;
        for (scene, frame) in self.scenes.iter().zip(&self.frames) {
            scene.write_png(dir.join(frame))?;
        }
        std::fs::write(dir.join("recording.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Reads the manifest; scenes are not stored, only the PNG frames.
    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let rec: Self = serde_json::from_str(&std::fs::read_to_string(dir.as_ref().join("recording.json"))?)?;
        if rec.version != RECORDING_SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!("unsupported recording schema version {}", rec.version)));
        }
        Ok(rec)
    }
}

/// On-policy rollout of `duration_steps` steps with one frame per step.
pub fn record_rollout(policy: &dyn Policy, env: Box<dyn Environment>, duration_steps: usize, seed: u64) -> Result<RolloutRecording> {
    if duration_steps == 0 {
        return Err(Error::InvalidInput("duration must be at least one step".into()));
    }
    let name = env.name().to_string();
    let mut driver = RolloutDriver::new(env, seed);
    let mut rec = RolloutRecording {
        version: RECORDING_SCHEMA_VERSION,
        id: String::new(),
        policy_hash: policy.id(),
        env: name,
        seed,
        duration_steps,
        steps_per_second: STEPS_PER_SECOND,
        frames: Vec::with_capacity(duration_steps),
        actions: Vec::with_capacity(duration_steps),
        rewards: Vec::with_capacity(duration_steps),
        crashes: Vec::with_capacity(duration_steps),
        scenes: Vec::with_capacity(duration_steps),
    };
    for i in 0..duration_steps {
        rec.scenes.push(driver.env().scene());
        let step = driver.step(policy, None)?;
        rec.frames.push(format!("frames/{i}.png"));
        rec.actions.push(step.applied_action);
        rec.rewards.push(step.transition.reward);
        rec.crashes.push(step.transition.crashed);
    }
    rec.id = rec.compute_id()?;
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::fixtures::query_states;
    use crate::envs::make_env;
    use crate::rl::{NetworkPolicy, QNetwork};

    fn pong_policy() -> NetworkPolicy {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        NetworkPolicy::new(QNetwork::init(&[6, 8, 3], &mut rng).unwrap(), 0.1)
    }

    fn small_cfg() -> PipelineConfig {
        PipelineConfig { steps: 400, k: 4, restarts: 3, ..PipelineConfig::default() }
    }

    #[test]
    fn critical_deck_is_sorted_and_consistent() {
        let policy = pong_policy();
        let deck = build_critical_deck(&policy, make_env("pong", 0).unwrap(), &small_cfg()).unwrap();
        assert_eq!(deck.len(), 4);
        deck.validate().unwrap();
        assert!(deck.entries.iter().all(|e| e.annotation.is_none() && e.above_threshold));
        let again = build_critical_deck(&policy, make_env("pong", 0).unwrap(), &small_cfg()).unwrap();
        assert_eq!(deck.id, again.id);
    }

    #[test]
    fn k_one_is_the_global_maximum() {
        let policy = pong_policy();
        let cfg = PipelineConfig { k: 1, ..small_cfg() };
        let deck = build_critical_deck(&policy, make_env("pong", 0).unwrap(), &cfg).unwrap();
        let buffer = collect_states(make_env("pong", 0).unwrap(), &policy, cfg.steps, cfg.rollout_seed, cfg.method, cfg.entropy)
            .unwrap();
        let best = buffer.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(deck.entries[0].score, best);
    }

    #[test]
    fn random_deck_shares_the_entry_schema() {
        let policy = pong_policy();
        let env = make_env("pong", 0).unwrap();
        let deck = build_random_deck(&policy, env, &PipelineConfig { k: 10, ..small_cfg() }, 9).unwrap();
        assert_eq!(deck.len(), 10);
        assert_eq!(deck.method, "random");
        deck.validate().unwrap();
        let again = build_random_deck(&policy, make_env("pong", 0).unwrap(), &PipelineConfig { k: 10, ..small_cfg() }, 9).unwrap();
        assert_eq!(deck, again);
        assert!(build_random_deck(&policy, make_env("pong", 0).unwrap(), &PipelineConfig { k: 0, ..small_cfg() }, 9).is_err());
    }

    #[test]
    fn edits_build_manipulated_conditions() {
        let policy = pong_policy();
        let deck = build_critical_deck(&policy, make_env("pong", 0).unwrap(), &small_cfg()).unwrap();

        let unchanged = edit_deck(&deck, &DeckEdit::default(), &policy).unwrap();
        assert_eq!(unchanged.entries, deck.entries);
        assert_eq!(unchanged.provenance.edits.len(), 1);
        assert_ne!(unchanged.id, deck.id);

        let missing = edit_deck(&deck, &DeckEdit { removals: vec![1], ..DeckEdit::default() }, &policy).unwrap();
        assert_eq!(missing.len(), deck.len() - 1);
        assert!(!missing.entries.contains(&deck.entries[1]));

        let wrong = (deck.entries[0].displayed_action + 1) % 3;
        let edit = DeckEdit { overrides: vec![ActionOverride { index: 0, action: wrong }], ..DeckEdit::default() };
        let incorrect = edit_deck(&deck, &edit, &policy).unwrap();
        incorrect.validate().unwrap();
        let flagged: Vec<&DeckEntry> = incorrect.entries.iter().filter(|e| e.annotation.is_some()).collect();
        assert_eq!(flagged.len(), 1);
        assert_eq!(flagged[0].displayed_action, wrong);
        assert!(flagged[0].annotation.as_ref().unwrap().synthetic_action);

        let bad = DeckEdit { overrides: vec![ActionOverride { index: 0, action: 3 }], ..DeckEdit::default() };
        assert!(edit_deck(&deck, &bad, &policy).is_err());
        let bad = DeckEdit { removals: vec![99], ..DeckEdit::default() };
        assert!(edit_deck(&deck, &bad, &policy).is_err());
    }

    #[test]
    fn injected_states_are_scored_and_flagged() {
        let policy = pong_policy();
        let deck = build_critical_deck(&policy, make_env("pong", 0).unwrap(), &small_cfg()).unwrap();
        let state = query_states("pong").unwrap().remove(0).state;
        let edit = DeckEdit { injections: vec![DeckInjection { state, displayed_action: None }], ..DeckEdit::default() };
        let out = edit_deck(&deck, &edit, &policy).unwrap();
        assert_eq!(out.len(), deck.len() + 1);
        out.validate().unwrap();
        let inj: Vec<&DeckEntry> = out.entries.iter().filter(|e| e.annotation.is_some()).collect();
        assert_eq!(inj.len(), 1);
        let a = inj[0].annotation.as_ref().unwrap();
        assert!(a.injected && !a.synthetic_action);
    }

    #[test]
    fn deck_round_trips_through_disk() {
        let policy = pong_policy();
        let deck = build_critical_deck(&policy, make_env("pong", 0).unwrap(), &small_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        deck.write_dir(dir.path()).unwrap();
        let back = CriticalStateDeck::read_dir(dir.path()).unwrap();
        assert_eq!(back, deck);
        back.validate().unwrap();
        for e in &deck.entries {
            assert!(dir.path().join(&e.frame).exists());
        }
    }

    #[test]
    fn recordings_have_one_frame_per_step() {
        let policy = pong_policy();
        let rec = record_rollout(&policy, make_env("pong", 0).unwrap(), 600, 5).unwrap();
        assert_eq!(rec.frames.len(), 600);
        assert_eq!(rec.duration_steps as u32, 60 * rec.steps_per_second);
        let one = record_rollout(&policy, make_env("pong", 0).unwrap(), 1, 5).unwrap();
        assert_eq!(one.frames.len(), 1);
        let again = record_rollout(&policy, make_env("pong", 0).unwrap(), 600, 5).unwrap();
        assert_eq!(rec.actions, again.actions);
        assert_eq!(rec.id, again.id);
        assert!(record_rollout(&policy, make_env("pong", 0).unwrap(), 0, 5).is_err());
    }
}
