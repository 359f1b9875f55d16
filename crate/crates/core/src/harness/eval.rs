use std::fmt;

use serde::{Deserialize, Serialize};

use super::train::prepare_inputs;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mep::{argmax2, mep_run};
use crate::model::{InterClip, Prediction, Vocab};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvalMode {
    /// Argmax of the classifier head.
    Classifier,
    /// Memory-enhanced prediction with memory size `L`.
    Mep { memory_size: usize },
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalMode::Classifier => write!(f, "classifier"),
            EvalMode::Mep { memory_size } => write!(f, "mep(L={memory_size})"),
        }
    }
}

/// Binary metrics with the sarcastic class (1) as positive.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: EvalMode,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl MetricsReport {
    pub fn from_counts(mode: EvalMode, tp: usize, fp: usize, tn: usize, fn_: usize) -> Result<Self> {
        let total = tp + fp + tn + fn_;
        if total == 0 {
            return Err(Error::invalid("metrics need at least one prediction"));
        }
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Ok(Self {
            mode,
            accuracy: ratio(tp + tn, total),
            precision,
            recall,
            f1,
            tp,
            fp,
            tn,
            fn_,
        })
    }
}

pub fn metrics(predictions: &[u8], labels: &[u8], mode: EvalMode) -> Result<MetricsReport> {
    if predictions.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &y) in predictions.iter().zip(labels) {
        if p > 1 || y > 1 {
            return Err(Error::invalid("labels and predictions must be 0 or 1"));
        }
        match (p, y) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 0) => tn += 1,
            _ => fn_ += 1,
        }
    }
    MetricsReport::from_counts(mode, tp, fp, tn, fn_)
}

/// Classifier output for every sample, in dataset order.
pub fn predict_dataset<T: Scalar>(
    model: &InterClip<T>,
    vocab: &Vocab,
    dataset: &Dataset,
) -> Result<Vec<Prediction<T>>> {
    prepare_inputs::<T>(dataset, vocab, model.config())?
        .iter()
        .map(|inp| model.predict(inp))
        .collect()
}

/// Final labels for a prediction stream under `mode`.
pub fn stream_labels<T: Scalar>(preds: &[Prediction<T>], mode: EvalMode, d_f: usize) -> Result<Vec<u8>> {
    match mode {
        EvalMode::Classifier => Ok(preds.iter().map(|p| argmax2(&p.probs)).collect()),
        EvalMode::Mep { memory_size } => {
            let stream = preds
                .iter()
                .map(|p| {
                    let h = p
                        .feature
                        .as_ref()
                        .ok_or_else(|| Error::invalid("MEP needs a projection head"))?;
                    if h.len() != d_f {
                        return Err(Error::shape(
                            "evaluate",
                            format!("feature length {} vs d_f {d_f}", h.len()),
                        ));
                    }
                    Ok((p.probs, h.clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(mep_run(&stream, memory_size, d_f)?
                .iter()
                .map(|p| p.final_label)
                .collect())
        }
    }
}

pub fn evaluate_stream<T: Scalar>(
    preds: &[Prediction<T>],
    labels: &[u8],
    mode: EvalMode,
    d_f: usize,
) -> Result<MetricsReport> {
    metrics(&stream_labels(preds, mode, d_f)?, labels, mode)
}

/// Metrics on a labelled set. The MEP stream follows dataset order.
pub fn evaluate<T: Scalar>(
    model: &InterClip<T>,
    vocab: &Vocab,
    dataset: &Dataset,
    mode: EvalMode,
) -> Result<MetricsReport> {
    let labels = dataset.labels()?;
    let preds = predict_dataset(model, vocab, dataset)?;
    evaluate_stream(&preds, &labels, mode, model.config().d_f)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<MetricsReport>,
    /// Memory size with the highest accuracy; ties go to the smallest.
    pub best_memory_size: usize,
}

/// One MEP evaluation per candidate over the same stream.
pub fn sweep_memory<T: Scalar>(
    preds: &[Prediction<T>],
    labels: &[u8],
    candidates: &[usize],
    d_f: usize,
) -> Result<SweepResult> {
    if candidates.is_empty() {
        return Err(Error::invalid("memory sweep needs at least one candidate"));
    }
    let rows = candidates
        .iter()
        .map(|&l| evaluate_stream(preds, labels, EvalMode::Mep { memory_size: l }, d_f))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, r) in rows.iter().enumerate() {
        let size = |k: usize| candidates[k];
        if r.accuracy > rows[best].accuracy || (r.accuracy == rows[best].accuracy && size(i) < size(best)) {
            best = i;
        }
    }
    Ok(SweepResult {
        best_memory_size: candidates[best],
        rows,
    })
}
