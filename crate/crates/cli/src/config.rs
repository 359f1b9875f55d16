//! The JSON run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use interclip::data::SynthSpec;
use interclip::harness::{TrainConfig, TOY_LORA_LR, TOY_LR};
use interclip::model::ModelConfig;
use interclip::numerics::AdamWConfig;
use interclip::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_samples: usize,
    pub text_noise: f64,
    pub image_noise: f64,
    pub shortcut: bool,
    /// Train / validation / test.
    pub fractions: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            text_noise: 0.0,
            image_noise: 0.0,
            shortcut: false,
            fractions: [0.8, 0.1, 0.1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_fraction: f64,
    pub min_lr_fraction: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            warmup_fraction: t.warmup_fraction,
            min_lr_fraction: t.min_lr_fraction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub mep: bool,
    pub memory_size: usize,
    /// Memory sizes to sweep; empty means a single evaluation.
    pub sweep: Vec<usize>,
    /// Which split file of the data directory to evaluate.
    pub split: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            mep: true,
            memory_size: 32,
            sweep: Vec::new(),
            split: "test".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Output directory; also the default data directory and checkpoint location.
    pub out: PathBuf,
    pub data_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub stream: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub optim: AdamWConfig,
    pub training: TrainingConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            model: ModelConfig::toy(),
            optim: AdamWConfig {
                lr: TOY_LR,
                lora_lr: TOY_LORA_LR,
                ..AdamWConfig::default()
            },
            training: TrainingConfig::default(),
            eval: EvalConfig::default(),
            paths: PathsConfig {
                out: PathBuf::from("runs"),
                ..PathsConfig::default()
            },
        }
    }
}

/// The parts of a [`RunConfig`] that determine results (no file paths).
#[derive(Serialize)]
pub struct Snapshot<'a> {
    pub seed: u64,
    pub data: &'a DataConfig,
    pub model: &'a ModelConfig,
    pub optim: &'a AdamWConfig,
    pub training: &'a TrainingConfig,
    pub eval: &'a EvalConfig,
}

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn snapshot(&self) -> Snapshot<'_> {
        Snapshot {
            seed: self.seed,
            data: &self.data,
            model: &self.model,
            optim: &self.optim,
            training: &self.training,
            eval: &self.eval,
        }
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            n_samples: self.data.n_samples,
            seed: self.seed,
            text_noise: self.data.text_noise,
            image_noise: self.data.image_noise,
            image_side: self.model.image_side,
            patch_size: self.model.patch_size,
            shortcut: self.data.shortcut,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            model: self.model.clone(),
            optim: self.optim,
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            seed: self.seed,
            warmup_fraction: self.training.warmup_fraction,
            min_lr_fraction: self.training.min_lr_fraction,
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.paths.data_dir.clone().unwrap_or_else(|| self.paths.out.clone())
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.paths
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.paths.out.join("checkpoint.json"))
    }

    /// Every problem with the configuration, not just the first.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut take = |r: Result<()>| match r {
            Ok(()) => Ok(()),
            Err(Error::Config(e)) => {
                errs.extend(e);
                Ok(())
            }
            Err(e) => Err(e),
        };
        take(self.train_config().validate())?;
        let mut spec = self.synth_spec();
        spec.n_samples = spec.n_samples.max(1);
        take(spec.validate())?;
        let f = self.data.fractions;
        if f.iter().any(|x| !x.is_finite() || *x < 0.0) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            errs.push(format!("data.fractions {f:?} must be non-negative and sum to 1"));
        }
        if self.eval.memory_size == 0 {
            errs.push("eval.memory_size must be at least 1 (L >= 1)".into());
        }
        if self.eval.sweep.contains(&0) {
            errs.push("eval.sweep candidates must be at least 1".into());
        }
        if !SPLITS.contains(&self.eval.split.as_str()) {
            errs.push(format!(
                "eval.split must be one of train, val, test; got {:?}",
                self.eval.split
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}
