//! Samples, the synthetic incongruity dataset, JSONL I/O, splitting and
//! batching.

mod probe;
mod synth;

pub use probe::{probe_accuracy, Modality};
pub use synth::{gen_synthetic, synth_vocab, SynthSpec, FILLER, NEG, POS, SHORTCUT_TOKEN};

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::Vocab;

/// One text-image pair. `image` is row-major, `side × side`, values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub id: String,
    pub text: String,
    pub image: Vec<f64>,
    pub side: usize,
    pub label: Option<u8>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleLine {
    id: String,
    text: String,
    image: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<u8>,
}

/// Where a dataset came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Generated {
        seed: u64,
    },
    File {
        name: String,
        sha256: String,
    },
    Split {
        parent: Box<Provenance>,
        part: String,
        seed: u64,
    },
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub samples: Vec<SamplePair>,
    pub vocab: Vocab,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Labels of every sample, or an error naming the first unlabeled one.
    pub fn labels(&self) -> Result<Vec<u8>> {
        self.samples
            .iter()
            .map(|s| {
                s.label
                    .ok_or_else(|| Error::invalid(format!("sample {:?} has no label", s.id)))
            })
            .collect()
    }

    pub fn positive_fraction(&self) -> f64 {
        let n = self.samples.iter().filter(|s| s.label == Some(1)).count();
        n as f64 / self.len().max(1) as f64
    }

    /// Every image must be `side × side`.
    pub fn check_image_side(&self, side: usize) -> Result<()> {
        match self.samples.iter().find(|s| s.side != side) {
            Some(s) => Err(Error::invalid(format!(
                "sample {:?} has a {}x{} image, expected {side}x{side}",
                s.id, s.side, s.side
            ))),
            None => Ok(()),
        }
    }

    fn subset(&self, idx: &[usize], part: &str, seed: u64) -> Dataset {
        Dataset {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            vocab: self.vocab.clone(),
            provenance: Provenance::Split {
                parent: Box::new(self.provenance.clone()),
                part: part.to_string(),
                seed,
            },
        }
    }
}

/// Vocabulary of every whitespace token in `samples`, in first-seen order,
/// after the specials.
pub fn build_vocab<'a>(samples: impl IntoIterator<Item = &'a SamplePair>) -> Vocab {
    let mut v = Vocab::new();
    for s in samples {
        for t in s.text.split_whitespace() {
            v.insert(t);
        }
    }
    v
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn parse_line(line: &str) -> std::result::Result<SamplePair, String> {
    let s: SampleLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let side = s.image.len();
    if side == 0 {
        return Err("image is empty".into());
    }
    if let Some(r) = s.image.iter().position(|r| r.len() != side) {
        return Err(format!(
            "image row {r} has {} values, expected {side}",
            s.image[r].len()
        ));
    }
    let image: Vec<f64> = s.image.into_iter().flatten().collect();
    if let Some(v) = image.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(format!("image value {v} outside [0, 1]"));
    }
    if matches!(s.label, Some(l) if l > 1) {
        return Err("label must be 0 or 1".into());
    }
    Ok(SamplePair {
        id: s.id,
        text: s.text,
        image,
        side,
        label: s.label,
    })
}

/// Order-preserving load; the vocabulary covers the file's own tokens.
pub fn load_jsonl(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut samples = Vec::new();
    let mut ids = HashSet::new();
    let mut side = None;
    for (n, line) in BufReader::new(bytes.as_slice()).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg,
        };
        let s = parse_line(&line).map_err(err)?;
        if *side.get_or_insert(s.side) != s.side {
            return Err(err(format!(
                "image is {}x{}, earlier samples are {}x{}",
                s.side,
                s.side,
                side.unwrap(),
                side.unwrap()
            )));
        }
        if !ids.insert(s.id.clone()) {
            return Err(err(format!("duplicate id {:?}", s.id)));
        }
        samples.push(s);
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Dataset {
        vocab: build_vocab(&samples),
        samples,
        provenance: Provenance::File {
            name,
            sha256: sha256_hex(&bytes),
        },
    })
}

pub fn save_jsonl(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in &dataset.samples {
        let line = SampleLine {
            id: s.id.clone(),
            text: s.text.clone(),
            image: s.image.chunks(s.side).map(<[f64]>::to_vec).collect(),
            label: s.label,
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One token per line; the line number (from 0) is the id.
pub fn save_vocab(vocab: &Vocab, path: &Path) -> Result<()> {
    let mut s = vocab.tokens().join("\n");
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn load_vocab(path: &Path) -> Result<Vocab> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Vocab::from_tokens(s.lines().map(str::to_string).collect())
}

/// Seeded partition into train / validation / test, stratified by label so
/// each part keeps the full set's label mix.
pub fn split(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let n = dataset.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut groups: BTreeMap<Option<u8>, Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        groups.entry(s.label).or_default().push(i);
    }
    for g in groups.values_mut() {
        g.shuffle(&mut rng);
    }

    // Interleave groups so every prefix tracks the overall label mix.
    let mut placed = vec![0usize; groups.len()];
    let sizes: Vec<usize> = groups.values().map(Vec::len).collect();
    let members: Vec<&Vec<usize>> = groups.values().collect();
    let mut order = Vec::with_capacity(n);
    for t in 0..n {
        let mut best = None;
        let mut best_lag = f64::NEG_INFINITY;
        for g in 0..sizes.len() {
            if placed[g] == sizes[g] {
                continue;
            }
            let lag = sizes[g] as f64 * (t + 1) as f64 / n as f64 - placed[g] as f64;
            if lag > best_lag {
                best_lag = lag;
                best = Some(g);
            }
        }
        let g = best.expect("some group has samples left");
        order.push(members[g][placed[g]]);
        placed[g] += 1;
    }

    let n_train = (n as f64 * fractions[0]).round() as usize;
    let n_val = ((n as f64 * fractions[1]).round() as usize).min(n - n_train);
    let (train, rest) = order.split_at(n_train);
    let (val, test) = rest.split_at(n_val);
    Ok((
        dataset.subset(train, "train", seed),
        dataset.subset(val, "validation", seed),
        dataset.subset(test, "test", seed),
    ))
}

/// Index batches for one epoch. With `shuffle`, the permutation is a
/// function of `(seed, epoch)`; the final partial batch is kept.
pub fn batches(len: usize, batch_size: usize, seed: u64, epoch: u64, shuffle: bool) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    let mut idx: Vec<usize> = (0..len).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        idx.shuffle(&mut rng);
    }
    Ok(idx.chunks(batch_size).map(<[usize]>::to_vec).collect())
}
