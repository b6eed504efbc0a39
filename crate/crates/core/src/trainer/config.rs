use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::ModelConfig;
use crate::negatives::NegativeConfig;
use crate::numcore::AdamWConfig;
use crate::{Error, Result};

pub const LR_GRID: [f64; 3] = [1e-3, 1e-4, 1e-5];
pub const WEIGHT_DECAY_GRID: [f64; 3] = [1e-4, 5e-5, 1e-5];

/// Training configuration, read from a flat TOML table.
///
/// Path keys are resolved relative to the directory of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub dim: usize,
    /// Graph layers, 1 or 2. Forced to 0 by `no_kp`.
    pub gcn_layers: usize,
    pub heads: usize,
    pub eta: f64,
    pub lambda: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub max_seq_len: usize,
    pub positional: bool,
    pub theta1: f64,
    pub theta2: f64,
    pub no_kp: bool,
    pub no_se: bool,
    pub no_llm: bool,
    pub no_cl: bool,
    pub train_frac: f64,
    pub val_frac: f64,
    pub deterministic: bool,
    /// Encoded dataset (`dataset.json`).
    pub dataset: Option<PathBuf>,
    /// Split manifest; a fresh split from `seed` when absent.
    pub split: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    /// Features of summarized texts.
    pub features: Option<PathBuf>,
    /// Features of original texts, used by `no_llm`.
    pub original_features: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 256,
            gcn_layers: 2,
            heads: 1,
            eta: 0.5,
            lambda: 0.7,
            lr: 1e-3,
            weight_decay: 1e-4,
            dropout: 0.3,
            max_epochs: 200,
            patience: 10,
            batch_size: 32,
            seed: 0,
            max_seq_len: 128,
            positional: false,
            theta1: 0.3,
            theta2: 0.6,
            no_kp: false,
            no_se: false,
            no_llm: false,
            no_cl: false,
            train_frac: 0.8,
            val_frac: 0.1,
            deterministic: true,
            dataset: None,
            split: None,
            graph: None,
            features: None,
            original_features: None,
            out_dir: None,
        }
    }
}

fn on_grid(v: f64, grid: &[f64]) -> bool {
    grid.iter().any(|g| (v - g).abs() <= 1e-12 * g)
}

impl TrainConfig {
    pub fn from_toml(text: &str, source: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |s| text[..s.start.min(text.len())].lines().count().max(1));
            Error::parse(source, line, e.message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads, validates, and resolves relative paths against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::error::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.dataset,
            &mut cfg.split,
            &mut cfg.graph,
            &mut cfg.features,
            &mut cfg.original_features,
            &mut cfg.out_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        // TOML integers are signed 64-bit.
        if i64::try_from(self.seed).is_err() {
            return Err(Error::Config(format!("seed must be at most {}, got {}", i64::MAX, self.seed)));
        }
        if self.dim == 0 {
            return err("dim must be positive".into());
        }
        if !(1..=2).contains(&self.gcn_layers) {
            return err(format!("gcn_layers must be 1 or 2, got {}", self.gcn_layers));
        }
        for (name, v) in [("eta", self.eta), ("lambda", self.lambda)] {
            if !(0.0..=1.0).contains(&v) {
                return err(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !on_grid(self.lr, &LR_GRID) {
            return err(format!("lr must be one of {LR_GRID:?}, got {}", self.lr));
        }
        if !on_grid(self.weight_decay, &WEIGHT_DECAY_GRID) {
            return err(format!(
                "weight_decay must be one of {WEIGHT_DECAY_GRID:?}, got {}",
                self.weight_decay
            ));
        }
        if self.batch_size == 0 || self.max_seq_len == 0 || self.max_epochs == 0 {
            return err("batch_size, max_seq_len and max_epochs must be positive".into());
        }
        if self.train_frac <= 0.0 || self.val_frac <= 0.0 || self.train_frac + self.val_frac > 1.0 {
            return err("split fractions must be positive with sum <= 1".into());
        }
        self.negative_config().validate()?;
        self.model_config().validate()
    }

    pub fn effective_gcn_layers(&self) -> usize {
        if self.no_kp {
            0
        } else {
            self.gcn_layers
        }
    }

    /// Weight of the prediction terms; dropping the contrastive terms is
    /// the same as `lambda = 1`.
    pub fn effective_lambda(&self) -> f64 {
        if self.no_cl {
            1.0
        } else {
            self.lambda
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            dim: self.dim,
            gcn_layers: self.effective_gcn_layers(),
            heads: self.heads,
            dropout: self.dropout,
            eta: self.eta,
            positional: self.positional,
        }
    }

    pub fn optimizer_config(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    pub fn negative_config(&self) -> NegativeConfig {
        NegativeConfig {
            theta1: self.theta1,
            theta2: self.theta2,
        }
    }

    /// Flattened `config.<key>` entries for checkpoint metadata.
    pub fn to_meta(&self) -> BTreeMap<String, String> {
        let value = toml::Value::try_from(self).expect("config serializes");
        let mut meta = BTreeMap::new();
        if let toml::Value::Table(t) = value {
            for (k, v) in t {
                meta.insert(format!("config.{k}"), v.to_string());
            }
        }
        meta
    }
}
