//! Single-file checkpoints.
//!
//! Layout: the 8-byte magic `FIGNNCKP`, a little-endian `u32` format
//! version, a little-endian `u64` manifest length, the JSON manifest, then
//! every tensor's values as little-endian `f64` in manifest order. The
//! manifest carries the model configuration, the vocabulary and its
//! fingerprint, and each tensor's name, shape and offset (in values) into
//! the blob section.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurestore::Vocabulary;
use crate::model::{Model, ModelConfig};
use crate::numerics::{ParameterStore, Tensor};

pub const MAGIC: &[u8; 8] = b"FIGNNCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    model: ModelConfig,
    vocabulary_sha256: String,
    vocabulary: Vocabulary,
    tensors: Vec<TensorEntry>,
}

/// A trained model together with the vocabulary its inputs were encoded by.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub vocabulary: Vocabulary,
}

impl Checkpoint {
    pub fn new(model: Model, vocabulary: Vocabulary) -> Result<Self> {
        let cfg = model.config();
        if cfg.vocab_size != vocabulary.total_feature_count || cfg.field_count != vocabulary.field_count() {
            return Err(Error::config(format!(
                "model expects {} fields over {} features, vocabulary has {} over {}",
                cfg.field_count,
                cfg.vocab_size,
                vocabulary.field_count(),
                vocabulary.total_feature_count
            )));
        }
        Ok(Checkpoint { model, vocabulary })
    }

    pub fn vocabulary_hash(&self) -> String {
        self.vocabulary.fingerprint()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::with_capacity(self.model.params.len());
        let mut offset = 0;
        for (name, t) in self.model.params.iter() {
            tensors.push(TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.len();
        }
        let manifest = Manifest {
            model: self.model.config().clone(),
            vocabulary_sha256: self.vocabulary_hash(),
            vocabulary: self.vocabulary.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(20 + json.len() + offset * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.model.params.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |msg: &str| Error::Invariant(format!("checkpoint: {msg}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(corrupt(&format!(
                "format version {version}, this build reads version {FORMAT_VERSION}"
            )));
        }
        let manifest_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let manifest_end = usize::try_from(manifest_len)
            .ok()
            .and_then(|n| n.checked_add(20))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| corrupt("manifest length exceeds file size"))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[20..manifest_end])
            .map_err(|e| corrupt(&format!("manifest: {e}")))?;
        manifest.vocabulary.validate()?;
        if manifest.vocabulary.fingerprint() != manifest.vocabulary_sha256 {
            return Err(corrupt("embedded vocabulary does not match its recorded hash"));
        }

        let blob = &bytes[manifest_end..];
        if !blob.len().is_multiple_of(8) {
            return Err(corrupt("tensor section is not a whole number of f64 values"));
        }
        let values: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut store = ParameterStore::new();
        let mut expected_offset = 0;
        for entry in &manifest.tensors {
            let [rows, cols] = entry.shape[..] else {
                return Err(corrupt(&format!("tensor {} is not rank 2", entry.name)));
            };
            let n = rows * cols;
            if entry.offset != expected_offset || entry.offset + n > values.len() {
                return Err(corrupt(&format!("tensor {} has a bad offset", entry.name)));
            }
            let data = values[entry.offset..entry.offset + n].to_vec();
            store.insert(entry.name.clone(), Tensor::new(rows, cols, data)?)?;
            expected_offset += n;
        }
        if expected_offset != values.len() {
            return Err(corrupt("trailing data after the last tensor"));
        }
        let model = Model::from_parts(manifest.model, store)?;
        Checkpoint::new(model, manifest.vocabulary)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
