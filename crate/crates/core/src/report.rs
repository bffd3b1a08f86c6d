//! Output envelope shared by every JSON and CSV artifact.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const ARTIFACT_VERSION: &str = "calpro/0.1.0";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub artifact: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new<C: Serialize>(config: &C, seed: u64) -> Result<Self> {
        Ok(Provenance {
            artifact: ARTIFACT_VERSION.into(),
            config_hash: config_hash(config)?,
            seed,
        })
    }

    /// Single comment line placed at the top of CSV outputs.
    pub fn csv_comment(&self) -> String {
        format!(
            "# artifact={} config_hash={} seed={}",
            self.artifact, self.config_hash, self.seed
        )
    }
}

/// SHA-256 of the config serialized with sorted keys.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let value = serde_json::to_value(config).map_err(|e| Error::config("config", e.to_string()))?;
    let canonical =
        serde_json::to_string(&value).map_err(|e| Error::config("config", e.to_string()))?;
    Ok(hex::encode(Sha256::digest(canonical.as_bytes())))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope<T> {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub report: T,
}

impl<T: Serialize> Envelope<T> {
    pub fn new(provenance: Provenance, report: T) -> Self {
        Envelope { provenance, report }
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse {
            offset: 0,
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn hash_ignores_key_order() {
        let a = config_hash(&json!({"a": 1, "b": [1, 2]})).unwrap();
        let b = config_hash(&json!({"b": [1, 2], "a": 1})).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
        assert_ne!(a, config_hash(&json!({"a": 2, "b": [1, 2]})).unwrap());
    }

    #[test]
    fn envelope_shape() {
        let p = Provenance::new(&json!({"x": 1}), 7).unwrap();
        let text = Envelope::new(p.clone(), json!({"ok": true}))
            .to_json_pretty()
            .unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["artifact"], ARTIFACT_VERSION);
        assert_eq!(v["seed"], 7);
        assert_eq!(v["config_hash"], p.config_hash);
        assert_eq!(v["report"]["ok"], true);
        assert!(p.csv_comment().starts_with("# artifact=calpro/0.1.0"));
    }
}
