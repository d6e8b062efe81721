//! Read-only registry of checkpoints and decks found under an assets directory.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use critstates::envs::EnvConfig;
use critstates::exposure::CriticalStateDeck;
use critstates::rl::{policy_from_checkpoint, NetworkPolicy, PolicyCheckpoint};
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::error::{Result, ServiceError};

pub struct PolicyAsset {
    pub path: PathBuf,
    pub env: EnvConfig,
    pub iterations: u64,
    pub policy: Arc<NetworkPolicy>,
}

pub struct DeckAsset {
    pub dir: PathBuf,
    pub deck: CriticalStateDeck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub hash: String,
    pub env: String,
    pub iterations: u64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeckSummary {
    pub id: String,
    pub policy_hash: String,
    pub env: String,
    pub kind: critstates::exposure::DeckKind,
    pub method: String,
    pub entries: usize,
}

#[derive(Default)]
pub struct Assets {
    pub policies: BTreeMap<String, PolicyAsset>,
    pub decks: BTreeMap<String, DeckAsset>,
}

fn is_checkpoint(path: &Path) -> bool {
    let mut magic = [0u8; 4];
    std::fs::File::open(path).and_then(|mut f| f.read_exact(&mut magic)).is_ok() && &magic == b"CSQ1"
}

impl Assets {
    /// Loads every checkpoint and every `deck.json` below `root`. Unreadable
    /// or corrupt files are skipped with a warning.
    pub fn scan(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        if !root.is_dir() {
            return Err(ServiceError::NotFound(format!("assets directory {}", root.display())));
        }
        let mut assets = Assets::default();
        for entry in WalkDir::new(root).sort_by_file_name().into_iter().filter_map(|e| e.ok()) {
            let path = entry.path();
            if !entry.file_type().is_file() {
                continue;
            }
            if path.file_name().is_some_and(|n| n == "deck.json") {
                let dir = path.parent().unwrap_or(root).to_path_buf();
                match CriticalStateDeck::read_dir(&dir).and_then(|d| d.validate().map(|_| d)) {
                    Ok(deck) => assets.add_deck(dir, deck),
                    Err(e) => log::warn!("skipping deck {}: {e}", path.display()),
                }
            } else if is_checkpoint(path) {
                match PolicyCheckpoint::load(path).and_then(|c| policy_from_checkpoint(&c).map(|p| (c, p))) {
                    Ok((ckpt, policy)) => assets.add_policy(path.to_path_buf(), &ckpt, policy),
                    Err(e) => log::warn!("skipping checkpoint {}: {e}", path.display()),
                }
            }
        }
        log::info!("loaded {} policies and {} decks from {}", assets.policies.len(), assets.decks.len(), root.display());
        Ok(assets)
    }

    pub fn add_policy(&mut self, path: PathBuf, ckpt: &PolicyCheckpoint, policy: NetworkPolicy) {
        self.policies.insert(
            ckpt.hash.clone(),
            PolicyAsset { path, env: ckpt.env.clone(), iterations: ckpt.iterations, policy: Arc::new(policy) },
        );
    }

    pub fn add_deck(&mut self, dir: PathBuf, deck: CriticalStateDeck) {
        self.decks.insert(deck.id.clone(), DeckAsset { dir, deck });
    }

    pub fn policy(&self, hash: &str) -> Result<&PolicyAsset> {
        self.policies.get(hash).ok_or_else(|| ServiceError::NotFound(format!("policy {hash}")))
    }

    pub fn deck(&self, id: &str) -> Result<&DeckAsset> {
        self.decks.get(id).ok_or_else(|| ServiceError::NotFound(format!("deck {id}")))
    }

    pub fn policy_summaries(&self) -> Vec<PolicySummary> {
        self.policies
            .iter()
            .map(|(hash, p)| PolicySummary {
                hash: hash.clone(),
                env: p.env.name().to_string(),
                iterations: p.iterations,
                alpha: p.policy.alpha(),
            })
            .collect()
    }

    pub fn deck_summaries(&self) -> Vec<DeckSummary> {
        self.decks
            .values()
            .map(|d| DeckSummary {
                id: d.deck.id.clone(),
                policy_hash: d.deck.policy_hash.clone(),
                env: d.deck.env.clone(),
                kind: d.deck.kind.clone(),
                method: d.deck.method.clone(),
                entries: d.deck.len(),
            })
            .collect()
    }
}
