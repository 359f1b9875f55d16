use serde::{Deserialize, Serialize};

use super::eval::{evaluate, EvalMode};
use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::model::{InterClip, ModelConfig, ModelInput, PrefixStates, Vocab};
use crate::numerics::{AdamW, AdamWConfig, LrSchedule, Tape};
use crate::scalar::Scalar;

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub optim: AdamWConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds parameter initialisation and batch order.
    pub seed: u64,
    pub warmup_fraction: f64,
    pub min_lr_fraction: f64,
}

/// Desk-scale learning rates: five times the full-scale pair, same ratio.
pub const TOY_LR: f64 = 2.5e-3;
pub const TOY_LORA_LR: f64 = 5e-4;

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::toy(),
            optim: AdamWConfig {
                lr: TOY_LR,
                lora_lr: TOY_LORA_LR,
                ..AdamWConfig::default()
            },
            epochs: 3,
            batch_size: 16,
            seed: 0,
            warmup_fraction: 0.2,
            min_lr_fraction: 0.01,
        }
    }
}

impl TrainConfig {
    /// Full-scale settings: ViT-B/32-sized encoders, batch 64, lr 5e-4 / 1e-4.
    pub fn paper() -> Self {
        Self {
            model: ModelConfig::paper(),
            optim: AdamWConfig::default(),
            batch_size: 64,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = match self.model.validate() {
            Err(Error::Config(e)) => e,
            Err(e) => return Err(e),
            Ok(()) => Vec::new(),
        };
        if self.batch_size == 0 {
            errs.push("batch_size must be at least 1".into());
        }
        for (name, lr) in [("lr", self.optim.lr), ("lora_lr", self.optim.lora_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                errs.push(format!("{name} must be positive, got {lr}"));
            }
        }
        if let Err(Error::Config(e)) = LrSchedule::new(1.0, 1, self.warmup_fraction, self.min_lr_fraction) {
            errs.extend(e);
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    pub classification: f64,
    pub projection: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_accuracy: Option<f64>,
}

pub struct TrainRun<T> {
    pub config: TrainConfig,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub model: InterClip<T>,
}

/// Tokenised and patchified inputs for every sample.
pub fn prepare_inputs<T: Scalar>(dataset: &Dataset, vocab: &Vocab, cfg: &ModelConfig) -> Result<Vec<ModelInput<T>>> {
    dataset.check_image_side(cfg.image_side)?;
    dataset
        .samples
        .iter()
        .map(|s| {
            let img: Vec<T> = s.image.iter().map(|v| T::lit(*v)).collect();
            ModelInput::new(&s.text, &img, vocab, cfg)
        })
        .collect()
}

pub const BATCH_SEED_SALT: u64 = 0x0062_6174_6368_6573;

/// Minimise `L = L_c + L_p` over the trainable set with AdamW and the
/// shared warmup-cosine schedule.
pub fn train<T: Scalar>(
    config: &TrainConfig,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    vocab: &Vocab,
) -> Result<TrainRun<T>> {
    config.validate()?;
    let mcfg = &config.model;
    if vocab.len() > mcfg.vocab_size {
        return Err(Error::invalid(format!(
            "vocabulary has {} tokens but vocab_size is {}",
            vocab.len(),
            mcfg.vocab_size
        )));
    }
    let labels = train_set.labels()?;
    let mut model = InterClip::<T>::new(mcfg, config.seed)?;
    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    if config.epochs == 0 || train_set.is_empty() {
        return Ok(TrainRun {
            config: config.clone(),
            steps,
            epochs,
            model,
        });
    }

    let inputs = prepare_inputs::<T>(train_set, vocab, mcfg)?;
    // The frozen lower layers see no trainable parameter, so their output
    // is computed once.
    let prefixes: Option<Vec<PrefixStates<T>>> = if model.arch.frozen_prefix().is_some() {
        Some(
            inputs
                .iter()
                .map(|inp| Ok(model.arch.prefix_states(&model.store, inp)?.expect("frozen backbone")))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };

    let per_epoch = train_set.len().div_ceil(config.batch_size) as u64;
    let total = per_epoch * config.epochs as u64;
    let schedule = LrSchedule::new(config.optim.lr, total, config.warmup_fraction, config.min_lr_fraction)?;
    let mut opt = AdamW::new(&model.store, config.optim);
    let mut k = 0u64;

    for epoch in 0..config.epochs {
        let order = batches(
            train_set.len(),
            config.batch_size,
            config.seed ^ BATCH_SEED_SALT,
            epoch as u64,
            true,
        )?;
        let mut sum = 0.0;
        for batch in &order {
            let xs: Vec<&ModelInput<T>> = batch.iter().map(|&i| &inputs[i]).collect();
            let ps: Option<Vec<&PrefixStates<T>>> = prefixes.as_ref().map(|p| batch.iter().map(|&i| &p[i]).collect());
            let ys: Vec<u8> = batch.iter().map(|&i| labels[i]).collect();

            let tape = Tape::new();
            let loss = model.arch.batch_loss(&tape, &model.store, &xs, ps.as_deref(), &ys)?;
            let grads = tape.backward(loss.total)?;
            let record = StepRecord {
                epoch,
                step: k,
                lr: schedule.lr_at(k + 1)?,
                classification: loss.classification.value().item().as_f64(),
                projection: loss.projection.map_or(0.0, |p| p.value().item().as_f64()),
                total: loss.total.value().item().as_f64(),
            };
            opt.step(&mut model.store, &grads, schedule.factor(k + 1)?)?;
            sum += record.total;
            steps.push(record);
            k += 1;
        }
        let val_accuracy = match val_set {
            Some(v) if !v.is_empty() => Some(evaluate(&model, vocab, v, EvalMode::Classifier)?.accuracy),
            _ => None,
        };
        epochs.push(EpochRecord {
            epoch,
            mean_loss: sum / order.len() as f64,
            val_accuracy,
        });
    }
    Ok(TrainRun {
        config: config.clone(),
        steps,
        epochs,
        model,
    })
}
