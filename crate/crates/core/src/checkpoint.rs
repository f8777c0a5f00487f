//! Model checkpoints: a directory holding `manifest.json` and one tensor
//! container per parameter, named by its dotted path.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::io::{read_json, write_json};
use crate::scgn::{ArchConfig, ModelParams};
use crate::tensor::container;

pub const CHECKPOINT_FORMAT: &str = "nucdenoise-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub arch: ArchConfig,
    pub tensors: Vec<TensorEntry>,
    /// Free-form provenance: epoch, step, dataset id.
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// Writes every parameter, then the manifest, each atomically.
pub fn save(dir: &Path, model: &ModelParams<f32>, meta: serde_json::Value) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tensors = Vec::new();
    for (name, t) in model.weights.named() {
        let file = format!("{name}.tensor");
        container::write(&dir.join(&file), t, &name)?;
        tensors.push(TensorEntry { name, shape: t.shape().to_vec(), file });
    }
    let manifest = Manifest { format: CHECKPOINT_FORMAT.into(), arch: model.arch.clone(), tensors, meta };
    write_json(&dir.join("manifest.json"), &manifest)
}

pub fn load(dir: &Path) -> Result<(ModelParams<f32>, Manifest)> {
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(config_err!("{}: unsupported checkpoint format {:?}", dir.display(), manifest.format));
    }
    let tensors = manifest
        .tensors
        .iter()
        .map(|e| {
            let (header, t) = container::read(&dir.join(&e.file))?;
            if header.name != e.name {
                return Err(config_err!("{}: holds `{}`, manifest expects `{}`", e.file, header.name, e.name));
            }
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    let model = ModelParams::from_flat(&manifest.arch, tensors)?;
    Ok((model, manifest))
}

/// Loads a checkpoint and requires it to match `expected`.
pub fn load_for(dir: &Path, expected: &ArchConfig) -> Result<ModelParams<f32>> {
    let (model, _) = load(dir)?;
    if &model.arch != expected {
        return Err(config_err!(
            "checkpoint architecture {} does not match requested {}",
            serde_json::to_string(&model.arch).unwrap_or_default(),
            serde_json::to_string(expected).unwrap_or_default()
        ));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let arch = ArchConfig { blocks: 1, channels: 8, reduction: 2, ..ArchConfig::default() };
        let model = ModelParams::<f32>::init(&arch, 3).unwrap();
        save(dir.path(), &model, serde_json::json!({"epoch": 2})).unwrap();
        let (back, manifest) = load(dir.path()).unwrap();
        assert_eq!(back, model);
        assert_eq!(manifest.meta["epoch"], 2);
        assert!(dir.path().join("blocks.0.sdgw.1.feat_conv.kernel.tensor").exists());
    }

    #[test]
    fn architecture_mismatch_names_both() {
        let dir = tempfile::tempdir().unwrap();
        let arch = ArchConfig { blocks: 1, channels: 8, reduction: 2, ..ArchConfig::default() };
        save(dir.path(), &ModelParams::init(&arch, 0).unwrap(), serde_json::Value::Null).unwrap();
        let other = ArchConfig { channels: 16, ..arch };
        let err = load_for(dir.path(), &other).unwrap_err();
        assert_eq!(err.kind(), "config");
        let msg = err.to_string();
        assert!(msg.contains("\"channels\":8") && msg.contains("\"channels\":16"), "{msg}");
    }

    #[test]
    fn corrupt_tensor_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let arch = ArchConfig { blocks: 1, channels: 4, reduction: 2, ..ArchConfig::default() };
        save(dir.path(), &ModelParams::init(&arch, 0).unwrap(), serde_json::Value::Null).unwrap();
        let path = dir.path().join("head_conv.kernel.tensor");
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load(dir.path()).unwrap_err(), Error::Format { .. }));
    }
}
