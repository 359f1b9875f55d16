//! Training, evaluation with and without the memory-enhanced predictor,
//! metrics, memory sweeps and ablations.

mod eval;
mod gradcheck;
mod train;

pub use eval::{
    evaluate, evaluate_stream, metrics, predict_dataset, stream_labels, sweep_memory, EvalMode, MetricsReport,
    SweepResult,
};
pub use gradcheck::{micro_batch, model_gradcheck, perturbed_micro_model, GRADCHECK_EPS, GRADCHECK_TOL};
pub use train::{
    prepare_inputs, train, EpochRecord, StepRecord, TrainConfig, TrainRun, BATCH_SEED_SALT, TOY_LORA_LR, TOY_LR,
};

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::Vocab;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Baseline,
    WoProj,
    WoMep,
    WoLora,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::WoProj, Variant::WoMep, Variant::WoLora];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::WoProj => "wo_proj",
            Variant::WoMep => "wo_mep",
            Variant::WoLora => "wo_lora",
        }
    }

    /// The training configuration this variant uses.
    pub fn train_config(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        match self {
            Variant::WoProj => c.model.projection_head = false,
            Variant::WoLora => {
                c.model.lora_rank = 0;
                c.model.lora_targets.clear();
            }
            Variant::Baseline | Variant::WoMep => {}
        }
        c
    }

    pub fn eval_mode(self, memory_size: usize) -> EvalMode {
        match self {
            Variant::WoProj | Variant::WoMep => EvalMode::Classifier,
            Variant::Baseline | Variant::WoLora => EvalMode::Mep { memory_size },
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.as_str() == s).ok_or_else(|| {
            Error::invalid(format!(
                "unknown ablation variant {s:?} (baseline, wo_proj, wo_mep, wo_lora)"
            ))
        })
    }
}

pub struct Ablation<T> {
    pub variant: Variant,
    pub run: TrainRun<T>,
    pub report: MetricsReport,
}

/// Train the variant on `train_set` and evaluate it on `eval_set`.
pub fn ablate<T: Scalar>(
    variant: Variant,
    config: &TrainConfig,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    eval_set: &Dataset,
    vocab: &Vocab,
    memory_size: usize,
) -> Result<Ablation<T>> {
    let run = train::<T>(&variant.train_config(config), train_set, val_set, vocab)?;
    let report = evaluate(&run.model, vocab, eval_set, variant.eval_mode(memory_size))?;
    Ok(Ablation { variant, run, report })
}

/// Aligned plain-text table, one row per report. `marker` flags a row.
pub fn format_table(rows: &[MetricsReport], marker: Option<usize>) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<14} {:>8} {:>9} {:>8} {:>8} {:>6} {:>6} {:>6} {:>6}",
        "mode", "acc", "precision", "recall", "f1", "tp", "fp", "tn", "fn"
    );
    for (i, r) in rows.iter().enumerate() {
        let mark = if marker == Some(i) { " *" } else { "" };
        let _ = writeln!(
            out,
            "{:<14} {:>8.4} {:>9.4} {:>8.4} {:>8.4} {:>6} {:>6} {:>6} {:>6}{mark}",
            r.mode.to_string(),
            r.accuracy,
            r.precision,
            r.recall,
            r.f1,
            r.tp,
            r.fp,
            r.tn,
            r.fn_
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
        assert!("wo_inter".parse::<Variant>().is_err());
    }

    #[test]
    fn table_is_aligned() {
        let r = MetricsReport::from_counts(EvalMode::Mep { memory_size: 8 }, 2, 1, 6, 1).unwrap();
        let t = format_table(&[r.clone(), r], Some(1));
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0].len(), lines[1].len());
        assert!(lines[2].ends_with(" *"));
    }
}
