//! Model persistence: a JSON manifest next to a little-endian f32 blob.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::params::EntryKind;
use super::{Architecture, Model};
use crate::error::{Error, Result};

pub const FORMAT: &str = "cxray-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in f32 elements.
    pub offset: usize,
    pub kind: EntryKind,
    pub trainable: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    architecture: Architecture,
    blob: String,
    blob_len: u64,
    blob_sha256: String,
    tensors: Vec<CheckpointEntry>,
}

/// Every tensor of a model plus the architecture needed to rebuild it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    architecture: Architecture,
    entries: IndexMap<String, CheckpointEntry>,
    data: Vec<f32>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Blob file written next to `manifest`.
pub fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Checkpoint {
        let mut entries = IndexMap::new();
        let mut data = Vec::new();
        for (name, e) in model.params().iter() {
            entries.insert(
                name.to_string(),
                CheckpointEntry {
                    name: name.to_string(),
                    shape: e.tensor.shape().to_vec(),
                    offset: data.len(),
                    kind: e.kind,
                    trainable: e.trainable,
                },
            );
            data.extend_from_slice(&e.tensor.data());
        }
        Checkpoint {
            architecture: *model.architecture(),
            entries,
            data,
        }
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = &CheckpointEntry> {
        self.entries.values()
    }

    pub fn tensor(&self, name: &str) -> Option<(&[usize], &[f32])> {
        let e = self.entries.get(name)?;
        Some((&e.shape, &self.data[e.offset..e.offset + numel(&e.shape)]))
    }

    /// Writes `path` (manifest) and its `.bin` blob.
    pub fn save(&self, path: &Path) -> Result<()> {
        let blob: Vec<u8> = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        let blob_file = blob_path(path);
        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            architecture: self.architecture,
            blob: blob_file
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            blob_len: blob.len() as u64,
            blob_sha256: sha256_hex(&blob),
            tensors: self.entries.values().cloned().collect(),
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&blob_file, &blob).map_err(|e| Error::io(&blob_file, e))?;
        let json = serde_json::to_string_pretty(&manifest)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.format != FORMAT {
            return Err(Error::Format(format!("{} is not a checkpoint manifest", path.display())));
        }
        if manifest.version != VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {} is not supported (expected {VERSION})",
                manifest.version
            )));
        }
        let blob_file = path.with_file_name(&manifest.blob);
        let blob = fs::read(&blob_file).map_err(|e| Error::io(&blob_file, e))?;
        if blob.len() as u64 != manifest.blob_len {
            return Err(Error::Integrity(format!(
                "blob {} holds {} bytes, manifest records {}",
                blob_file.display(),
                blob.len(),
                manifest.blob_len
            )));
        }
        if sha256_hex(&blob) != manifest.blob_sha256 {
            return Err(Error::Integrity(format!("blob {} fails its SHA-256 check", blob_file.display())));
        }
        let data: Vec<f32> = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut entries = IndexMap::new();
        for e in manifest.tensors {
            let end = e.offset + numel(&e.shape);
            if end > data.len() {
                return Err(Error::Integrity(format!("tensor `{}` extends past the end of the blob", e.name)));
            }
            if entries.insert(e.name.clone(), e.clone()).is_some() {
                return Err(Error::Format(format!("tensor `{}` listed twice", e.name)));
            }
        }
        Ok(Checkpoint {
            architecture: manifest.architecture,
            entries,
            data,
        })
    }
}

impl Model {
    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Model> {
        Model::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_meta_mlp, build_model, Depth, ModelConfig};

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = build_meta_mlp(9);
        m.save(&path).unwrap();
        let back = Model::load(&path).unwrap();
        assert_eq!(m.params().snapshot(), back.params().snapshot());
        assert_eq!(m.architecture(), back.architecture());
    }

    #[test]
    fn corrupted_blob_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        build_meta_mlp(9).save(&path).unwrap();
        let blob = blob_path(&path);
        let mut bytes = fs::read(&blob).unwrap();
        bytes[10] ^= 0x40;
        fs::write(&blob, &bytes).unwrap();
        assert!(matches!(Model::load(&path), Err(Error::Integrity(_))));
        bytes.truncate(bytes.len() - 4);
        fs::write(&blob, &bytes).unwrap();
        assert!(matches!(Model::load(&path), Err(Error::Integrity(_))));
    }

    #[test]
    fn strict_load_names_mismatch() {
        let small = ModelConfig {
            depth: Depth::D38,
            input_size: 64,
            width_divisor: 16,
            ..ModelConfig::default()
        };
        let a = build_model(&small, 0).unwrap();
        let mut b = build_model(&ModelConfig { width_divisor: 8, ..small }, 0).unwrap();
        match b.load_state(&a.to_checkpoint()) {
            Err(Error::ParamMismatch { name, .. }) => assert_eq!(name, "conv1.weight"),
            other => panic!("expected mismatch, got {other:?}"),
        }
    }
}
