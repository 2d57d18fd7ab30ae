//! Model checkpoints: a JSON manifest next to a flat little-endian f64 blob.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::model::{build_classifier, ClassifierModel, ModelConfig};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "f64-le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in values (not bytes) into the parameter blob.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub seed: u64,
    pub config: ModelConfig,
    pub layers: Vec<LayerEntry>,
    pub params_file: String,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

/// Writes `<stem>.json` and `<stem>.bin`, returning both paths.
pub fn save_checkpoint<T: Scalar>(model: &ClassifierModel<T>, stem: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
    let (json, bin) = paths(stem.as_ref());
    let mut layers = Vec::new();
    let mut blob = Vec::new();
    let mut offset = 0;
    for (name, p) in model.param_names().into_iter().zip(model.params()) {
        layers.push(LayerEntry {
            name,
            shape: p.shape().to_vec(),
            offset,
        });
        offset += p.len();
        for v in p.values() {
            blob.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        seed: model.config.seed,
        config: model.config.clone(),
        layers,
        params_file: bin
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    fs::write(&json, serde_json::to_string_pretty(&manifest)?)?;
    fs::write(&bin, blob)?;
    Ok((json, bin))
}

pub fn load_checkpoint<T: Scalar>(stem: impl AsRef<Path>) -> Result<ClassifierModel<T>> {
    let (json, _) = paths(stem.as_ref());
    let manifest: CheckpointManifest = serde_json::from_str(&fs::read_to_string(&json)?)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::validation(
            "format",
            format!("unsupported `{}`", manifest.format),
        ));
    }
    let bin = json.with_file_name(&manifest.params_file);
    let bytes = fs::read(bin)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::validation("params", "blob length is not a multiple of 8"));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut model = build_classifier::<T>(&manifest.config)?;
    let names = model.param_names();
    if names.len() != manifest.layers.len() {
        return Err(Error::validation(
            "layers",
            "manifest does not match the configured architecture",
        ));
    }
    for ((p, name), entry) in model.params_mut().into_iter().zip(names).zip(&manifest.layers) {
        if entry.name != name || entry.shape != p.shape() {
            return Err(Error::validation("layers", format!("mismatch at `{}`", entry.name)));
        }
        let end = entry.offset + p.len();
        let src = values
            .get(entry.offset..end)
            .ok_or_else(|| Error::validation("params", "blob too short"))?;
        for (d, &s) in p.values_mut().iter_mut().zip(src) {
            *d = T::lit(s);
        }
    }
    Ok(model)
}
