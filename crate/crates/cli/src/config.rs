//! Config files are JSON objects with optional sections `env`, `train`,
//! `pipeline`, `eval` and `serve`. Each section overrides the defaults
//! field by field; command-line flags override the file.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

#[derive(Debug, Clone, Default)]
pub struct ConfigFile(Value);

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if !value.is_object() {
            bail!("config {} must be a JSON object", path.display());
        }
        Ok(Self(value))
    }

    pub fn section(&self, name: &str) -> Option<&Value> {
        self.0.get(name)
    }

    /// `base` with the named section merged over it.
    pub fn layer<T: Serialize + DeserializeOwned>(&self, name: &str, base: T) -> Result<T> {
        let Some(section) = self.section(name) else { return Ok(base) };
        let mut merged = serde_json::to_value(&base)?;
        merge(&mut merged, section);
        serde_json::from_value(merged).with_context(|| format!("config section `{name}`"))
    }
}

/// Recursive object merge; non-object values replace.
fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}
