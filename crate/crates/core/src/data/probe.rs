use super::synth::{NEG, POS};
use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Text,
    Image,
}

fn feature(s: &super::SamplePair, m: Modality) -> f64 {
    match m {
        Modality::Text => s
            .text
            .split_whitespace()
            .map(|w| (POS.contains(&w) as i32 - NEG.contains(&w) as i32) as f64)
            .sum(),
        Modality::Image => s.image.iter().sum::<f64>() / s.image.len() as f64,
    }
}

/// Accuracy on `eval` of a one-feature logistic regression fitted on
/// `train`, where the feature reads a single modality (lexicon balance of
/// the text, or mean image brightness).
pub fn probe_accuracy(train: &Dataset, eval: &Dataset, modality: Modality) -> Result<f64> {
    let ytr = train.labels()?;
    let yev = eval.labels()?;
    if ytr.is_empty() || yev.is_empty() {
        return Err(Error::invalid("probe needs non-empty labeled sets"));
    }
    let xtr: Vec<f64> = train.samples.iter().map(|s| feature(s, modality)).collect();
    let n = xtr.len() as f64;
    let mean = xtr.iter().sum::<f64>() / n;
    let sd = (xtr.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
        .sqrt()
        .max(1e-12);
    let z = |x: f64| (x - mean) / sd;

    let (mut w, mut b) = (0.0f64, 0.0f64);
    for _ in 0..500 {
        let (mut gw, mut gb) = (0.0, 0.0);
        for (x, y) in xtr.iter().zip(&ytr) {
            let p = 1.0 / (1.0 + (-(w * z(*x) + b)).exp());
            let r = p - f64::from(*y);
            gw += r * z(*x);
            gb += r;
        }
        w -= 0.5 * gw / n;
        b -= 0.5 * gb / n;
    }
    let correct = eval
        .samples
        .iter()
        .zip(&yev)
        .filter(|(s, y)| u8::from(w * z(feature(s, modality)) + b > 0.0) == **y)
        .count();
    Ok(correct as f64 / yev.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::super::{gen_synthetic, split, SynthSpec};
    use super::*;

    #[test]
    fn single_modality_probes_are_near_chance() {
        let d = gen_synthetic(&SynthSpec {
            n_samples: 2000,
            seed: 21,
            ..Default::default()
        })
        .unwrap();
        let (tr, _, te) = split(&d, [0.5, 0.0, 0.5], 3).unwrap();
        for m in [Modality::Text, Modality::Image] {
            let acc = probe_accuracy(&tr, &te, m).unwrap();
            assert!((0.45..=0.60).contains(&acc), "{m:?}: {acc}");
        }
    }

    #[test]
    fn probe_detects_a_unimodal_label() {
        let d = gen_synthetic(&SynthSpec {
            n_samples: 2000,
            seed: 21,
            shortcut: true,
            ..Default::default()
        })
        .unwrap();
        let mut d2 = d.clone();
        // make the lexicon balance carry the label: drop the image bit
        for s in &mut d2.samples {
            let pos = s.text.split_whitespace().filter(|w| POS.contains(w)).count();
            s.label = Some(u8::from(pos > 1));
        }
        let acc = probe_accuracy(&d2, &d2, Modality::Text).unwrap();
        assert!(acc > 0.95, "{acc}");
    }
}
