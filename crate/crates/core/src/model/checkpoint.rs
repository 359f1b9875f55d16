//! Checkpoint = JSON manifest + sidecar blob of little-endian `f32` values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{InterClip, ModelConfig, Vocab};
use crate::error::{Error, Result};
use crate::numerics::{ParamGroup, Tensor};
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "interclip-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset into the blob.
    pub offset: u64,
    pub trainable: bool,
    pub group: ParamGroup,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    /// Blob file name, relative to the manifest.
    pub blob: String,
    pub config: ModelConfig,
    pub vocab: Vec<String>,
    pub params: Vec<ParamEntry>,
}

/// A loaded checkpoint.
pub struct Checkpoint {
    pub model: InterClip<f32>,
    pub vocab: Vocab,
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `path` (manifest) and `path` with extension `.bin`.
pub fn save_checkpoint<T: Scalar>(model: &InterClip<T>, vocab: &Vocab, path: &Path) -> Result<CheckpointManifest> {
    let blob_file = blob_path(path);
    let mut bytes = Vec::new();
    let mut params = Vec::with_capacity(model.store.len());
    for (_, p) in model.store.iter() {
        params.push(ParamEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            dtype: "f32".into(),
            offset: bytes.len() as u64,
            trainable: p.trainable,
            group: p.group,
        });
        for x in p.value.data() {
            bytes.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        blob: blob_file
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        config: model.config().clone(),
        vocab: vocab.tokens().to_vec(),
        params,
    };
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(&blob_file, &bytes).map_err(|e| Error::io(&blob_file, e))?;
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?;
    Ok(manifest)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::invalid(format!(
            "unsupported checkpoint format {:?}",
            manifest.format
        )));
    }
    let blob_file = path.with_file_name(&manifest.blob);
    let bytes = fs::read(&blob_file).map_err(|e| Error::io(&blob_file, e))?;
    let vocab = Vocab::from_tokens(manifest.vocab.clone())?;
    let mut model = InterClip::<f32>::new(&manifest.config, 0)?;
    if model.store.len() != manifest.params.len() {
        return Err(Error::invalid(format!(
            "checkpoint lists {} parameters, configuration builds {}",
            manifest.params.len(),
            model.store.len()
        )));
    }
    for entry in &manifest.params {
        if entry.dtype != "f32" {
            return Err(Error::invalid(format!(
                "{}: unsupported dtype {}",
                entry.name, entry.dtype
            )));
        }
        let id = model
            .store
            .id(&entry.name)
            .ok_or_else(|| Error::invalid(format!("unknown parameter {}", entry.name)))?;
        let n: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + 4 * n;
        let raw = bytes
            .get(start..end)
            .ok_or_else(|| Error::invalid(format!("{}: blob too short", entry.name)))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        model.store.set(id, Tensor::new(entry.shape.clone(), data)?)?;
    }
    Ok(Checkpoint { model, vocab })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InteractionMode;

    #[test]
    fn round_trip_preserves_every_value() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let cfg = ModelConfig::micro(InteractionMode::Tw);
        let model = InterClip::<f32>::new(&cfg, 11).unwrap();
        let mut vocab = Vocab::new();
        vocab.insert("hello");
        let manifest = save_checkpoint(&model, &vocab, &path).unwrap();
        assert_eq!(manifest.blob, "ckpt.bin");
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.vocab, vocab);
        for ((_, a), (_, b)) in model.store.iter().zip(back.model.store.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value, b.value);
            assert_eq!(a.trainable, b.trainable);
        }
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let model = InterClip::<f32>::new(&ModelConfig::micro(InteractionMode::None), 1).unwrap();
        save_checkpoint(&model, &Vocab::new(), &path).unwrap();
        fs::write(dir.path().join("c.bin"), [0u8; 8]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
