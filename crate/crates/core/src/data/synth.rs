use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Provenance, SamplePair};
use crate::error::{Error, Result};
use crate::model::Vocab;

pub const POS: [&str; 16] = [
    "great",
    "love",
    "wonderful",
    "amazing",
    "happy",
    "perfect",
    "excellent",
    "delightful",
    "brilliant",
    "fantastic",
    "lovely",
    "superb",
    "joyful",
    "beautiful",
    "awesome",
    "pleasant",
];
pub const NEG: [&str; 16] = [
    "awful",
    "hate",
    "terrible",
    "horrible",
    "sad",
    "broken",
    "miserable",
    "dreadful",
    "ugly",
    "boring",
    "annoying",
    "gloomy",
    "painful",
    "nasty",
    "disaster",
    "worst",
];
pub const FILLER: [&str; 32] = [
    "the", "a", "today", "this", "my", "day", "is", "was", "so", "just", "again", "morning", "weather", "trip",
    "coffee", "train", "view", "weekend", "lunch", "meeting", "really", "very", "at", "in", "on", "with", "our", "new",
    "old", "here", "there", "now",
];
/// Appended mostly to sarcastic samples when the shortcut is enabled.
pub const SHORTCUT_TOKEN: &str = "#not";

const SENTIMENT_WORDS: usize = 6;
const BRIGHT: f64 = 0.8;
const DARK: f64 = 0.2;
const IMAGE_JITTER: f64 = 0.1;
const PIXEL_JITTER: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_samples: usize,
    pub seed: u64,
    /// Chance, per sentiment word, of also injecting a word from the
    /// opposite lexicon.
    pub text_noise: f64,
    /// Per-pixel chance of flipping `v` to `1 - v`.
    pub image_noise: f64,
    pub image_side: usize,
    pub patch_size: usize,
    /// Add a label-correlated cue token to the text.
    pub shortcut: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            seed: 0,
            text_noise: 0.0,
            image_noise: 0.0,
            image_side: 32,
            patch_size: 8,
            shortcut: false,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.n_samples == 0 {
            errs.push("empty dataset: n_samples must be at least 1".to_string());
        }
        for (name, p) in [("text_noise", self.text_noise), ("image_noise", self.image_noise)] {
            if !(0.0..1.0).contains(&p) {
                errs.push(format!("{name} must lie in [0, 1), got {p}"));
            }
        }
        if self.patch_size == 0 || self.image_side == 0 || !self.image_side.is_multiple_of(self.patch_size) {
            errs.push(format!(
                "image_side {} must be a positive multiple of patch_size {}",
                self.image_side, self.patch_size
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }
}

/// The fixed vocabulary of the generator.
pub fn synth_vocab(shortcut: bool) -> Vocab {
    let mut v = Vocab::new();
    for w in POS.iter().chain(&NEG).chain(&FILLER) {
        v.insert(w);
    }
    if shortcut {
        v.insert(SHORTCUT_TOKEN);
    }
    v
}

fn sentence(rng: &mut ChaCha8Rng, b_t: bool, noise: f64) -> Vec<&'static str> {
    let (own, other) = if b_t { (&POS, &NEG) } else { (&NEG, &POS) };
    let mut words = Vec::new();
    for _ in 0..SENTIMENT_WORDS {
        words.push(*own.choose(rng).unwrap());
        if rng.random::<f64>() < noise {
            words.push(*other.choose(rng).unwrap());
        }
    }
    let fill = rng.random_range(1..=2);
    for _ in 0..fill {
        words.push(*FILLER.choose(rng).unwrap());
    }
    words.shuffle(rng);
    words
}

fn image(rng: &mut ChaCha8Rng, b_v: bool, side: usize, noise: f64) -> Vec<f64> {
    let base = if b_v { BRIGHT } else { DARK } + rng.random_range(-IMAGE_JITTER..=IMAGE_JITTER);
    (0..side * side)
        .map(|_| {
            let mut v = (base + rng.random_range(-PIXEL_JITTER..=PIXEL_JITTER)).clamp(0.0, 1.0);
            if rng.random::<f64>() < noise {
                v = 1.0 - v;
            }
            (v * 1000.0).round() / 1000.0
        })
        .collect()
}

/// XOR dataset: label = text bit XOR image bit, so neither modality alone
/// predicts the label.
pub fn gen_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let samples = (0..spec.n_samples)
        .map(|i| {
            let b_t: bool = rng.random();
            let b_v: bool = rng.random();
            let label = u8::from(b_t ^ b_v);
            let mut words = sentence(&mut rng, b_t, spec.text_noise);
            let image = image(&mut rng, b_v, spec.image_side, spec.image_noise);
            if spec.shortcut {
                let p = if label == 1 { 0.8 } else { 0.1 };
                if rng.random::<f64>() < p {
                    words.push(SHORTCUT_TOKEN);
                }
            }
            SamplePair {
                id: format!("syn-{i:06}"),
                text: words.join(" "),
                image,
                side: spec.image_side,
                label: Some(label),
            }
        })
        .collect();
    Ok(Dataset {
        samples,
        vocab: synth_vocab(spec.shortcut),
        provenance: Provenance::Generated { seed: spec.seed },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lexicon_bit(text: &str) -> bool {
        let pos = text.split_whitespace().filter(|w| POS.contains(w)).count();
        let neg = text.split_whitespace().filter(|w| NEG.contains(w)).count();
        pos > neg
    }

    #[test]
    fn xor_truth_table_without_noise() {
        let d = gen_synthetic(&SynthSpec {
            n_samples: 200,
            ..Default::default()
        })
        .unwrap();
        for s in &d.samples {
            let b_t = lexicon_bit(&s.text);
            let mean = s.image.iter().sum::<f64>() / s.image.len() as f64;
            let b_v = mean > 0.5;
            assert_eq!(s.label, Some(u8::from(b_t ^ b_v)));
            if b_t && b_v {
                assert!(mean > 0.6 && s.text.split_whitespace().all(|w| !NEG.contains(&w)));
            }
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let s = SynthSpec {
            n_samples: 50,
            seed: 11,
            text_noise: 0.2,
            image_noise: 0.1,
            ..Default::default()
        };
        assert_eq!(gen_synthetic(&s).unwrap().samples, gen_synthetic(&s).unwrap().samples);
    }

    #[test]
    fn label_balance() {
        let d = gen_synthetic(&SynthSpec {
            n_samples: 10_000,
            seed: 5,
            ..Default::default()
        })
        .unwrap();
        let f = d.positive_fraction();
        assert!((0.47..=0.53).contains(&f), "{f}");
    }

    #[test]
    fn vocab_covers_every_token() {
        let d = gen_synthetic(&SynthSpec {
            n_samples: 300,
            shortcut: true,
            text_noise: 0.5,
            ..Default::default()
        })
        .unwrap();
        assert!(d.samples.iter().any(|s| s.text.contains(SHORTCUT_TOKEN)));
        for s in &d.samples {
            for w in s.text.split_whitespace() {
                assert!(d.vocab.id(w).is_some(), "{w}");
            }
        }
    }

    #[test]
    fn spec_validation() {
        let bad = SynthSpec {
            n_samples: 0,
            text_noise: 1.0,
            image_side: 30,
            ..Default::default()
        };
        match bad.validate() {
            Err(Error::Config(e)) => assert_eq!(e.len(), 3),
            other => panic!("{other:?}"),
        }
    }
}
