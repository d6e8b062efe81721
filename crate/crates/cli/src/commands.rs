use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use critstates::criticality::CriticalityThreshold;
use critstates::envs::EnvConfig;
use critstates::exposure::{build_critical_deck, build_random_deck, edit_deck, record_rollout, CriticalStateDeck, DeckEdit};
use critstates::mdp::{soft_value_iteration, MaxEntConfig, TabularMdp};
use critstates::rl::{evaluate, policy_from_checkpoint, train_soft_q, NetworkPolicy, PolicyCheckpoint, TrainConfig};
use critstates::selection::PipelineConfig;
use critstates::Policy;
use critstates_service::{AppState, Assets, ServerConfig};
use serde::{Deserialize, Serialize};

use crate::config::ConfigFile;
use crate::manifest::ManifestBuilder;
use crate::{Cli, Cmd, DeckMode, EnvName, UsageError};

pub fn run(cli: Cli) -> Result<()> {
    let file = ConfigFile::load(cli.config.as_deref()).map_err(usage)?;
    match cli.command {
        Cmd::Train { env, iterations, seed, alpha, out } => train(&file, env, iterations, seed, alpha, out),
        Cmd::Deck { checkpoint, mode, t, frac, k, method, percentile, seed, out } => {
            let mut cfg = file.layer("pipeline", PipelineConfig::default()).map_err(usage)?;
            if let Some(t) = t {
                cfg.steps = t;
            }
            if let Some(f) = frac {
                cfg.frac = f;
            }
            if let Some(k) = k {
                cfg.k = k as usize;
            }
            if let Some(m) = method {
                cfg.method = m.into();
            }
            if let Some(p) = percentile {
                cfg.threshold = CriticalityThreshold::percentile(p).map_err(|e| UsageError(e.to_string()))?;
            }
            if let Some(s) = seed {
                cfg.rollout_seed = s;
                cfg.cluster_seed = s;
            }
            if cfg.k == 0 {
                return Err(UsageError("k must be at least 1".into()).into());
            }
            if !(cfg.frac > 0.0 && cfg.frac <= 1.0) {
                return Err(UsageError(format!("frac {} outside (0, 1]", cfg.frac)).into());
            }
            deck(&checkpoint, mode, &cfg, out)
        }
        Cmd::EditDeck { deck, checkpoint, edits, out } => edit(&deck, &checkpoint, &edits, &out),
        Cmd::Eval { checkpoint, steps, seeds, json } => {
            let mut cfg = file.layer("eval", EvalConfig::default()).map_err(usage)?;
            if let Some(s) = steps {
                cfg.steps = s;
            }
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            eval(&checkpoint, &cfg, json)
        }
        Cmd::Rollout { checkpoint, steps, seed, out } => rollout(&checkpoint, steps, seed, &out),
        Cmd::Serve { port, host, assets, log_dir, step_timeout_ms } => {
            let mut cfg = file.layer("serve", ServeConfig::default()).map_err(usage)?;
            if let Some(p) = port {
                cfg.port = p;
            }
            if let Some(h) = host {
                cfg.host = h;
            }
            if let Some(a) = assets {
                cfg.assets = a;
            }
            if log_dir.is_some() {
                cfg.log_dir = log_dir;
            }
            if let Some(t) = step_timeout_ms {
                cfg.step_timeout_ms = t;
            }
            serve(&cfg)
        }
        Cmd::Oracle { mdp, alpha, tolerance, json } => oracle(&mdp, alpha, tolerance, json),
    }
}

fn usage(e: anyhow::Error) -> anyhow::Error {
    UsageError(format!("{e:#}")).into()
}

fn load_policy(path: &Path) -> Result<(PolicyCheckpoint, NetworkPolicy)> {
    let ckpt = PolicyCheckpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let policy = policy_from_checkpoint(&ckpt)?;
    Ok((ckpt, policy))
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

#[derive(Serialize)]
struct TrainSnapshot<'a> {
    env: &'a EnvConfig,
    train: &'a TrainConfig,
}

fn train(
    file: &ConfigFile,
    env: EnvName,
    iterations: Option<u64>,
    seed: Option<u64>,
    alpha: Option<f64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let env_cfg: EnvConfig = match file.section("env") {
        Some(v) => serde_json::from_value(v.clone()).context("config section `env`").map_err(usage)?,
        None => EnvConfig::default_for(env.as_str())?,
    };
    if env_cfg.name() != env.as_str() {
        return Err(UsageError(format!("config file describes {} but {} was requested", env_cfg.name(), env.as_str())).into());
    }
    let mut cfg = file.layer("train", TrainConfig::for_env(env.as_str())?).map_err(usage)?;
    if let Some(i) = iterations {
        cfg.iterations = i;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(a) = alpha {
        cfg.alpha = a;
    }
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    let out = out.unwrap_or_else(|| PathBuf::from(format!("runs/{}-seed{}-{}", env.as_str(), cfg.seed, cfg.iterations)));
    let manifest = ManifestBuilder::new("train", TrainSnapshot { env: &env_cfg, train: &cfg })?;

    log::info!("training {} for {} iterations (seed {})", env.as_str(), cfg.iterations, cfg.seed);
    let outcome = train_soft_q(&env_cfg, &cfg).context("training failed")?;
    std::fs::create_dir_all(&out)?;
    let ckpt_path = out.join("policy.ckpt");
    outcome.checkpoint.save(&ckpt_path)?;
    let mut metrics = std::fs::File::create(out.join("metrics.jsonl"))?;
    for row in &outcome.metrics {
        writeln!(metrics, "{}", serde_json::to_string(row)?)?;
    }
    manifest.finish(&out)?;
    log::info!("policy {}", outcome.checkpoint.hash);
    println!("{}", ckpt_path.display());
    Ok(())
}

fn deck(checkpoint: &Path, mode: DeckMode, cfg: &PipelineConfig, out: Option<PathBuf>) -> Result<()> {
    let (ckpt, policy) = load_policy(checkpoint)?;
    let mut manifest = ManifestBuilder::new(
        "deck",
        serde_json::json!({ "mode": format!("{mode:?}").to_lowercase(), "pipeline": cfg }),
    )?;
    manifest.input(checkpoint)?;
    let env = ckpt.env.build(cfg.rollout_seed)?;
    let deck = match mode {
        DeckMode::Critical => build_critical_deck(&policy, env, cfg),
        DeckMode::Random => build_random_deck(&policy, env, cfg, cfg.rollout_seed),
    }
    .context("deck pipeline failed")?;
    let out = out.unwrap_or_else(|| {
        PathBuf::from(format!("decks/{}-{}-{}", ckpt.env.name(), format!("{mode:?}").to_lowercase(), short(&deck.id)))
    });
    write_deck(&deck, &out, manifest)
}

fn write_deck(deck: &CriticalStateDeck, out: &Path, manifest: ManifestBuilder) -> Result<()> {
    deck.write_dir(out)?;
    manifest.finish(out)?;
    log::info!("deck {} with {} entries, cutoff {}", deck.id, deck.len(), deck.cutoff);
    println!("{}", out.display());
    Ok(())
}

fn edit(deck_dir: &Path, checkpoint: &Path, edits: &Path, out: &Path) -> Result<()> {
    let deck = CriticalStateDeck::read_dir(deck_dir).with_context(|| format!("reading deck {}", deck_dir.display()))?;
    let (_, policy) = load_policy(checkpoint)?;
    let script: DeckEdit = serde_json::from_str(&std::fs::read_to_string(edits)?).context("parsing edit script")?;
    if deck.policy_hash != policy.id() {
        return Err(UsageError(format!("deck belongs to policy {}, not {}", deck.policy_hash, policy.id())).into());
    }
    let mut manifest = ManifestBuilder::new("edit-deck", &script)?;
    manifest.input(&deck_dir.join("deck.json"))?;
    manifest.input(checkpoint)?;
    manifest.input(edits)?;
    let edited = edit_deck(&deck, &script, &policy)?;
    write_deck(&edited, out, manifest)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub steps: usize,
    /// Rollouts use seeds `0..seeds`.
    pub seeds: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { steps: 20_000, seeds: 5 }
    }
}

fn eval(checkpoint: &Path, cfg: &EvalConfig, json: bool) -> Result<()> {
    if cfg.steps == 0 || cfg.seeds == 0 {
        return Err(UsageError("steps and seeds must be positive".into()).into());
    }
    let (ckpt, policy) = load_policy(checkpoint)?;
    let seeds: Vec<u64> = (0..cfg.seeds).collect();
    let report = evaluate(&policy, &ckpt.env, cfg.steps, &seeds)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    println!("policy {} ({}, {} iterations)", short(&report.policy), ckpt.env.name(), ckpt.iterations);
    println!("{:>6} {:>8} {:>8} {:>14} {:>14}", "seed", "steps", "crashes", "crashes/step", "return/step");
    for m in &report.per_seed {
        println!("{:>6} {:>8} {:>8} {:>14.6} {:>14.6}", m.seed, m.steps, m.crashes, m.crashes_per_step, m.return_per_step);
    }
    println!(
        "{:>6} {:>8} {:>8} {:>14} {:>14}",
        "mean",
        "",
        "",
        format!("{:.6}±{:.6}", report.mean_crashes_per_step, report.stderr_crashes_per_step),
        format!("{:.6}±{:.6}", report.mean_return_per_step, report.stderr_return_per_step)
    );
    Ok(())
}

fn rollout(checkpoint: &Path, steps: usize, seed: u64, out: &Path) -> Result<()> {
    let (ckpt, policy) = load_policy(checkpoint)?;
    let mut manifest = ManifestBuilder::new("rollout", serde_json::json!({ "steps": steps, "seed": seed }))?;
    manifest.input(checkpoint)?;
    let rec = record_rollout(&policy, ckpt.env.build(seed)?, steps, seed)?;
    rec.write_dir(out)?;
    manifest.finish(out)?;
    println!("{}", out.display());
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ServeConfig {
    pub host: String,
    pub port: u16,
    pub assets: PathBuf,
    #[serde(default)]
    pub log_dir: Option<PathBuf>,
    pub step_timeout_ms: u64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            assets: PathBuf::from("."),
            log_dir: None,
            step_timeout_ms: critstates_service::server::DEFAULT_STEP_TIMEOUT.as_millis() as u64,
        }
    }
}

fn serve(cfg: &ServeConfig) -> Result<()> {
    let assets = Assets::scan(&cfg.assets).map_err(|e| UsageError(e.to_string()))?;
    let log_dir = cfg.log_dir.clone().unwrap_or_else(|| cfg.assets.join("sessions"));
    let server_cfg =
        ServerConfig { log_dir: Some(log_dir), step_timeout: std::time::Duration::from_millis(cfg.step_timeout_ms) };
    let state = AppState::new(assets, server_cfg)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((cfg.host.as_str(), cfg.port))
            .await
            .with_context(|| format!("binding {}:{}", cfg.host, cfg.port))?;
        let addr = listener.local_addr()?;
        println!("listening on http://{addr}");
        std::io::stdout().flush()?;
        critstates_service::serve(listener, state).await?;
        Ok(())
    })
}

#[derive(Serialize)]
struct OracleOutput {
    alpha: f64,
    discount: f64,
    v: Vec<f64>,
    q: Vec<Vec<f64>>,
    pi: Vec<Vec<f64>>,
}

fn oracle(path: &Path, alpha: f64, tolerance: f64, json: bool) -> Result<()> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mdp: TabularMdp = serde_json::from_str(&text).with_context(|| format!("parsing MDP {}", path.display()))?;
    let cfg = MaxEntConfig { tolerance, ..MaxEntConfig::with_alpha(alpha) };
    let (table, pi) = soft_value_iteration(&mdp, &cfg)?;
    let out = OracleOutput {
        alpha,
        discount: mdp.discount,
        v: table.v,
        q: table.q,
        pi: pi.distributions.iter().map(|d| d.probabilities().to_vec()).collect(),
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&out)?);
        return Ok(());
    }
    let row = |xs: &[f64]| xs.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ");
    println!("V*");
    for (s, v) in out.v.iter().enumerate() {
        println!("{s} {v:e}");
    }
    println!("Q*");
    for (s, q) in out.q.iter().enumerate() {
        println!("{s} {}", row(q));
    }
    println!("pi*");
    for (s, p) in out.pi.iter().enumerate() {
        println!("{s} {}", row(p));
    }
    Ok(())
}
