use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HeadConfig, HeadParams};
use crate::error::{Error, Result};
use crate::report::Provenance;

pub const HEAD_VERSION: &str = "calpro-head/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeadFile {
    version: String,
    config: HeadConfig,
    input_dim: usize,
    weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

pub fn head_to_json_string(head: &HeadParams) -> Result<String> {
    head_to_json_with_provenance(head, None)
}

/// Checkpoint text stamped with the run's artifact version, config hash and seed.
pub fn head_to_json_with_provenance(
    head: &HeadParams,
    provenance: Option<&Provenance>,
) -> Result<String> {
    let file = HeadFile {
        version: HEAD_VERSION.into(),
        config: head.config.clone(),
        input_dim: head.input_dim,
        weights: head.weights.clone(),
        provenance: provenance.cloned(),
    };
    serde_json::to_string(&file).map_err(|e| Error::Parse {
        offset: 0,
        message: e.to_string(),
    })
}

/// Parses a checkpoint and checks it was trained under `expected`.
pub fn head_from_json_str(text: &str, expected: &HeadConfig) -> Result<HeadParams> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::from_json(e, text))?;
    let version = value
        .get("version")
        .and_then(|v| v.as_str())
        .unwrap_or("<missing>");
    if version != HEAD_VERSION {
        return Err(Error::Version {
            found: version.into(),
            expected: HEAD_VERSION.into(),
        });
    }
    let file: HeadFile = serde_json::from_value(value).map_err(|e| Error::Parse {
        offset: 0,
        message: e.to_string(),
    })?;
    if &file.config != expected {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint has {:?}, caller expects {:?}",
            file.config, expected
        )));
    }
    let head = HeadParams::zeros(file.config, file.input_dim)?;
    if head.weights.len() != file.weights.len() {
        return Err(Error::Dimension(format!(
            "checkpoint holds {} weights, layout needs {}",
            file.weights.len(),
            head.weights.len()
        )));
    }
    Ok(HeadParams {
        weights: file.weights,
        ..head
    })
}

pub fn save_head(head: &HeadParams, path: impl AsRef<Path>) -> Result<()> {
    let text = head_to_json_string(head)?;
    std::fs::write(path.as_ref(), text).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn load_head(path: impl AsRef<Path>, expected: &HeadConfig) -> Result<HeadParams> {
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    head_from_json_str(&text, expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_chain_dataset, GeneratorConfig};

    #[test]
    fn round_trip_gives_identical_outputs() {
        let ds = gen_chain_dataset(&GeneratorConfig {
            n_chains: 2,
            chain_length: 15,
            ..Default::default()
        })
        .unwrap();
        let cfg = HeadConfig {
            init_seed: 9,
            ..Default::default()
        };
        let head = HeadParams::init(cfg.clone(), ds.feature_dim() + 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("head.json");
        save_head(&head, &path).unwrap();
        let back = load_head(&path, &cfg).unwrap();
        assert_eq!(back, head);
        assert_eq!(back.predict(&ds).unwrap(), head.predict(&ds).unwrap());
    }

    #[test]
    fn mismatch_and_corruption_rejected() {
        let cfg = HeadConfig::default();
        let text = head_to_json_string(&HeadParams::init(cfg.clone(), 4).unwrap()).unwrap();
        let other = HeadConfig {
            layer_norm: false,
            ..cfg.clone()
        };
        assert!(matches!(
            head_from_json_str(&text, &other),
            Err(Error::ConfigMismatch(_))
        ));
        assert!(matches!(
            head_from_json_str(&text[..text.len() - 7], &cfg),
            Err(Error::Parse { .. })
        ));
        let bumped = text.replace(HEAD_VERSION, "calpro-head/2");
        assert!(matches!(
            head_from_json_str(&bumped, &cfg),
            Err(Error::Version { .. })
        ));
    }
}
