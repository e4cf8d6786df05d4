//! Run configuration file for `train` and `sweep`.

use std::fs;
use std::path::{Path, PathBuf};

use fignn::model::{AblationConfig, ModelConfig, ModelKind};
use fignn::training::TrainingConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub embed_dim: usize,
    pub state_dim: usize,
    pub heads: usize,
    pub steps: usize,
    /// Defaults to `embed_dim`.
    pub fm_factors: Option<usize>,
    pub leaky_slope: f64,
    pub ablation: AblationConfig,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::new(ModelKind::Fignn, 2, 2);
        ModelSection {
            kind: ModelKind::Fignn,
            embed_dim: d.embed_dim,
            state_dim: d.state_dim,
            heads: d.heads,
            steps: d.steps,
            fm_factors: None,
            leaky_slope: d.leaky_slope,
            ablation: AblationConfig::default(),
        }
    }
}

impl ModelSection {
    pub fn resolve(&self, field_count: usize, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            kind: self.kind,
            field_count,
            vocab_size,
            embed_dim: self.embed_dim,
            state_dim: self.state_dim,
            heads: self.heads,
            steps: self.steps,
            fm_factors: self.fm_factors.unwrap_or(self.embed_dim),
            leaky_slope: self.leaky_slope,
            ablation: self.ablation,
        }
    }
}

/// Everything `train` needs. Relative paths are taken relative to the
/// directory of the config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    /// Prebuilt vocabulary; built from `data` when absent.
    pub vocab: Option<PathBuf>,
    pub min_count: u64,
    pub split_seed: u64,
    pub model: ModelSection,
    pub training: TrainingConfig,
    pub out: Option<PathBuf>,
    pub history: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            schema: None,
            vocab: None,
            min_count: 1,
            split_seed: 0,
            model: ModelSection::default(),
            training: TrainingConfig::default(),
            out: None,
            history: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> fignn::Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| fignn::Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data, &mut cfg.schema, &mut cfg.vocab, &mut cfg.out, &mut cfg.history]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}
