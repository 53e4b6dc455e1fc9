//! Run configuration: a flat TOML file where every key is optional and
//! unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SyntheticKind;
use crate::error::{FnrError, Result};
use crate::model::{Mode, ModelConfig};
use crate::optimizer::{EarlyStopping, ParamGroupConfig, PlateauScheduler};

/// Numeric precision for training and evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    /// 32-bit floats.
    #[default]
    Standard,
    /// 64-bit floats.
    Extended,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Dataset manifest; mutually exclusive with `synthetic`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticKind>,
    pub synthetic_n: usize,
    pub synthetic_d: usize,
    /// Cluster mean distance in noise standard deviations.
    pub synthetic_separation: f64,
    pub data_seed: u64,

    pub mode: Mode,
    pub k: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub lambda: f64,

    pub classifier_lr: f64,
    pub classifier_weight_decay: f64,
    pub projector_lr: f64,
    pub projector_weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,

    pub batch_size: usize,
    pub max_epochs: usize,
    pub val_fraction: f64,
    pub scheduler_factor: f64,
    pub scheduler_patience: usize,
    pub min_lr: f64,
    pub early_stopping_patience: usize,
    pub improvement_threshold: f64,

    pub precision: Precision,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let cls = ParamGroupConfig::classifier_default();
        let proj = ParamGroupConfig::projector_default();
        RunConfig {
            dataset: None,
            synthetic: None,
            synthetic_n: 2000,
            synthetic_d: 16,
            synthetic_separation: 6.0,
            data_seed: 0,
            mode: model.mode,
            k: model.k,
            hidden: model.hidden,
            dropout: model.dropout_rate,
            lambda: model.lambda,
            classifier_lr: cls.lr,
            classifier_weight_decay: cls.weight_decay,
            projector_lr: proj.lr,
            projector_weight_decay: proj.weight_decay,
            beta1: cls.beta1,
            beta2: cls.beta2,
            epsilon: cls.epsilon,
            batch_size: 256,
            max_epochs: 100,
            val_fraction: 0.1,
            scheduler_factor: 0.5,
            scheduler_patience: 5,
            min_lr: 1e-6,
            early_stopping_patience: 10,
            improvement_threshold: 1e-4,
            precision: Precision::Standard,
            seed: 0,
            out_dir: PathBuf::from("runs/fnr"),
        }
    }
}

impl RunConfig {
    /// Parses and validates a config file. A relative `dataset` path is
    /// resolved against the config file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| FnrError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)
            .map_err(|e| FnrError::Config(format!("{}: {e}", path.display())))?;
        if let Some(ds) = &cfg.dataset {
            if ds.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.dataset = Some(dir.join(ds));
                }
            }
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| FnrError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.dataset, &self.synthetic) {
            (Some(_), Some(_)) => {
                return Err(FnrError::Config(
                    "set either dataset or synthetic, not both".into(),
                ))
            }
            (None, None) => {
                return Err(FnrError::Config(
                    "one of dataset or synthetic is required".into(),
                ))
            }
            _ => {}
        }
        self.model_config().validate()?;
        for g in self.groups() {
            g.validate()?;
        }
        if self.batch_size < 2 {
            return Err(FnrError::Config("batch_size must be at least 2".into()));
        }
        if self.max_epochs == 0 {
            return Err(FnrError::Config("max_epochs must be positive".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 0.5) {
            return Err(FnrError::Config("val_fraction must lie in (0, 0.5)".into()));
        }
        if !(self.scheduler_factor > 0.0 && self.scheduler_factor < 1.0) {
            return Err(FnrError::Config(
                "scheduler_factor must lie in (0, 1)".into(),
            ));
        }
        if self.scheduler_patience == 0 || self.early_stopping_patience == 0 {
            return Err(FnrError::Config("patience values must be positive".into()));
        }
        if !(self.min_lr > 0.0) || !(self.improvement_threshold >= 0.0) {
            return Err(FnrError::Config(
                "min_lr must be > 0 and improvement_threshold >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            k: self.k,
            hidden: self.hidden,
            dropout_rate: self.dropout,
            lambda: self.lambda,
            mode: self.mode,
            seed: self.seed,
        }
    }

    /// `[projector, classifier]`.
    pub fn groups(&self) -> [ParamGroupConfig; 2] {
        let group = |name: &str, lr, weight_decay| ParamGroupConfig {
            name: name.into(),
            lr,
            weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        };
        [
            group("projector", self.projector_lr, self.projector_weight_decay),
            group(
                "classifier",
                self.classifier_lr,
                self.classifier_weight_decay,
            ),
        ]
    }

    pub fn scheduler(&self) -> PlateauScheduler {
        let smallest = self.projector_lr.min(self.classifier_lr);
        PlateauScheduler::new(
            self.scheduler_factor,
            self.scheduler_patience,
            self.improvement_threshold,
            self.min_lr / smallest,
        )
    }

    pub fn early_stopping(&self) -> EarlyStopping {
        EarlyStopping::new(self.early_stopping_patience, self.improvement_threshold)
    }
}

/// A commented config listing every key at its default.
pub const DEFAULT_CONFIG_TOML: &str = r#"# Data: set exactly one of `dataset` (path to manifest.json) or `synthetic`.
# dataset = "data/corpus/manifest.json"
synthetic = "clusters"        # "xor" | "clusters"
synthetic_n = 2000
synthetic_d = 16
synthetic_separation = 6.0    # cluster mean distance in noise sd units
data_seed = 0

mode = "fused_s"              # text_only | image_only | fused_ws | fused_s
k = 64                        # projection size
hidden = 64                   # classifier hidden width
dropout = 0.3
lambda = 1.0                  # similarity loss weight

classifier_lr = 0.005
classifier_weight_decay = 0.07
projector_lr = 0.001
projector_weight_decay = 0.001
beta1 = 0.9
beta2 = 0.999
epsilon = 1e-8

batch_size = 256
max_epochs = 100
val_fraction = 0.1
scheduler_factor = 0.5
scheduler_patience = 5
min_lr = 1e-6
early_stopping_patience = 10
improvement_threshold = 1e-4

precision = "standard"        # standard (f32) | extended (f64)
seed = 0
out_dir = "runs/fnr"
"#;
