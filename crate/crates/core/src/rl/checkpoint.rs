//! `CSQ1` checkpoint container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "CSQ1"
//! u32 format version (1)
//! u32 len, env name (UTF-8)
//! u32 n, n × u32 layer sizes
//! f64 alpha
//! u64 training iterations
//! u32 n, n × f64 action grid
//! u32 len, JSON metadata {env config, train config}
//! u64 n, n × f64 parameters (per layer: weights row-major, then biases)
//! 32 bytes SHA-256 of everything above
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::QNetwork;
use super::train::TrainConfig;
use crate::envs::EnvConfig;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CSQ1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Metadata {
    env: EnvConfig,
    train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyCheckpoint {
    pub env: EnvConfig,
    /// Action value for each network output.
    pub action_grid: Vec<f64>,
    pub network: QNetwork,
    pub config: TrainConfig,
    pub iterations: u64,
    /// Hex SHA-256 of the serialized body.
    pub hash: String,
}

impl PolicyCheckpoint {
    pub fn new(env: EnvConfig, action_grid: Vec<f64>, network: QNetwork, config: TrainConfig, iterations: u64) -> Result<Self> {
        if action_grid.len() != network.output_dim() {
            return Err(Error::Checkpoint(format!(
                "action grid has {} entries but the network has {} outputs",
                action_grid.len(),
                network.output_dim()
            )));
        }
        let mut ckpt = Self { env, action_grid, network, config, iterations, hash: String::new() };
        ckpt.hash = hex::encode(Sha256::digest(ckpt.body()?));
        Ok(ckpt)
    }

    pub fn alpha(&self) -> f64 {
        self.config.alpha
    }

    fn body(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let name = self.env.name().as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(self.network.sizes.len() as u32).to_le_bytes());
        for s in &self.network.sizes {
            out.extend_from_slice(&(*s as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.config.alpha.to_le_bytes());
        out.extend_from_slice(&self.iterations.to_le_bytes());
        out.extend_from_slice(&(self.action_grid.len() as u32).to_le_bytes());
        for a in &self.action_grid {
            out.extend_from_slice(&a.to_le_bytes());
        }
        let meta = serde_json::to_vec(&Metadata { env: self.env.clone(), train: self.config.clone() })?;
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        let params = self.network.params();
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = self.body()?;
        let digest = Sha256::digest(&out);
        if hex::encode(digest) != self.hash {
            return Err(Error::Checkpoint("stored hash does not match parameters".into()));
        }
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 32 || &bytes[..4] != MAGIC {
            return Err(Error::Checkpoint("not a CSQ1 checkpoint".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        let digest = Sha256::digest(body);
        if digest.as_slice() != trailer {
            return Err(Error::Checkpoint("content hash mismatch".into()));
        }
        let mut r = Reader { bytes: body, pos: 4 };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("env name is not UTF-8".into()))?;
        let n_sizes = r.u32()? as usize;
        let sizes = (0..n_sizes).map(|_| r.u32().map(|s| s as usize)).collect::<Result<Vec<_>>>()?;
        let alpha = r.f64()?;
        let iterations = r.u64()?;
        let n_grid = r.u32()? as usize;
        let action_grid = (0..n_grid).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let meta_len = r.u32()? as usize;
        let meta: Metadata = serde_json::from_slice(r.take(meta_len)?)?;
        let n_params = r.u64()? as usize;
        let params = (0..n_params).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes before hash".into()));
        }
        if meta.env.name() != name || meta.train.alpha.to_bits() != alpha.to_bits() {
            return Err(Error::Checkpoint("header disagrees with metadata".into()));
        }
        let mut network = QNetwork::zeros_with_basis(&sizes, meta.train.action_basis)?;
        network.set_params(&params)?;
        let ckpt = Self::new(meta.env, action_grid, network, meta.train, iterations)?;
        debug_assert_eq!(ckpt.hash, hex::encode(digest));
        Ok(ckpt)
    }

    /// Recomputes the content hash and compares it with the stored one.
    pub fn verify(&self) -> Result<()> {
        let actual = hex::encode(Sha256::digest(self.body()?));
        if actual != self.hash {
            return Err(Error::Checkpoint(format!("hash mismatch: stored {}, computed {actual}", self.hash)));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
