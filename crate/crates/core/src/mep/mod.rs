//! Memory-enhanced predictor: a two-channel, fixed-capacity store of
//! projection features curated by prediction entropy, voting by summed
//! cosine similarity.

mod oracle;
mod replay;

pub use oracle::mep_oracle;
pub use replay::{load_replay, write_predictions, ReplayRecord};

use crate::error::{Error, Result};
use crate::numerics::{clamp_prob, exact_sum, softmax};
use crate::scalar::Scalar;

/// Allowed deviation of a probability pair's sum from 1.
pub const PAIR_TOL: f64 = 1e-6;
/// Allowed deviation of a feature's norm from 1.
pub const UNIT_TOL: f64 = 1e-5;

/// How a channel's similarities become its logit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Vote {
    /// Raw sum over stored rows.
    #[default]
    Sum,
    /// Sum divided by the channel fill; an empty channel scores 0.
    Mean,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MepPrediction<T> {
    pub pseudo_label: u8,
    pub entropy: T,
    pub classifier_probs: [T; 2],
    pub final_probs: [T; 2],
    pub final_label: u8,
}

/// Two memory channels of capacity `L`, each holding feature rows and
/// their entropies in slot order.
#[derive(Clone, Debug)]
pub struct MemoryState<T> {
    capacity: usize,
    d_f: usize,
    vote: Vote,
    features: [Vec<T>; 2],
    entropies: [Vec<T>; 2],
    samples_seen: usize,
}

/// Argmax of a pair; a tie goes to 0.
pub fn argmax2<T: Scalar>(p: &[T; 2]) -> u8 {
    u8::from(p[1] > p[0])
}

pub(crate) fn check_pair<T: Scalar>(p: &[T; 2]) -> Result<()> {
    let ok = p.iter().all(|x| x.is_finite() && *x >= T::zero() && *x <= T::one())
        && ((p[0] + p[1]).as_f64() - 1.0).abs() <= PAIR_TOL;
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(format!("invalid probability pair [{}, {}]", p[0], p[1])))
    }
}

pub(crate) fn check_feature<T: Scalar>(h: &[T], d_f: usize) -> Result<()> {
    if h.len() != d_f {
        return Err(Error::shape(
            "mep_step",
            format!("feature length {} vs d_f {d_f}", h.len()),
        ));
    }
    let norm = exact_sum(h.iter().map(|x| x.as_f64() * x.as_f64())).sqrt();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOL {
        return Err(Error::invalid(format!("feature is not unit-norm (norm {norm})")));
    }
    Ok(())
}

/// Shannon entropy (natural log) of a probability pair after clamping.
pub fn entropy<T: Scalar>(p: &[T; 2]) -> Result<T> {
    check_pair(p)?;
    let h: f64 = p
        .iter()
        .map(|x| {
            let q = clamp_prob(x.as_f64());
            -q * q.ln()
        })
        .sum();
    Ok(T::lit(h.clamp(0.0, std::f64::consts::LN_2)))
}

/// `Σ_k h·rows[k]`, summed exactly so the result is independent of row order.
pub(crate) fn similarity_sum<'a, T: Scalar>(h: &[T], rows: impl IntoIterator<Item = &'a [T]>) -> f64 {
    exact_sum(
        rows.into_iter()
            .flat_map(|r| r.iter().zip(h).map(|(a, b)| (*a * *b).as_f64())),
    )
}

pub(crate) fn vote<T: Scalar>(logits: [f64; 2], fill: [usize; 2], mode: Vote) -> Result<[T; 2]> {
    let l = match mode {
        Vote::Sum => logits,
        Vote::Mean => [0, 1].map(|c| if fill[c] == 0 { 0.0 } else { logits[c] / fill[c] as f64 }),
    };
    let p = softmax(&l)?;
    Ok([T::lit(p[0]), T::lit(p[1])])
}

impl<T: Scalar> MemoryState<T> {
    pub fn new(capacity: usize, d_f: usize) -> Result<Self> {
        Self::with_vote(capacity, d_f, Vote::Sum)
    }

    pub fn with_vote(capacity: usize, d_f: usize, vote: Vote) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("memory size L must be at least 1"));
        }
        if d_f == 0 {
            return Err(Error::invalid("feature width d_f must be at least 1"));
        }
        Ok(Self {
            capacity,
            d_f,
            vote,
            features: [Vec::new(), Vec::new()],
            entropies: [Vec::new(), Vec::new()],
            samples_seen: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn d_f(&self) -> usize {
        self.d_f
    }

    pub fn samples_seen(&self) -> usize {
        self.samples_seen
    }

    /// Number of filled rows in channel `c`.
    pub fn fill(&self, c: usize) -> usize {
        self.entropies[c].len()
    }

    /// Stored entropies of channel `c`, in slot order.
    pub fn entropies(&self, c: usize) -> &[T] {
        &self.entropies[c]
    }

    /// Stored feature row `k` of channel `c`.
    pub fn feature(&self, c: usize, k: usize) -> &[T] {
        &self.features[c][k * self.d_f..(k + 1) * self.d_f]
    }

    fn rows(&self, c: usize) -> impl Iterator<Item = &[T]> {
        self.features[c].chunks_exact(self.d_f)
    }

    /// Slot of the largest stored entropy in channel `c`; ties go to the
    /// smallest slot.
    fn max_slot(&self, c: usize) -> usize {
        let e = &self.entropies[c];
        let mut j = 0;
        for k in 1..e.len() {
            if e[k] > e[j] {
                j = k;
            }
        }
        j
    }

    /// Store the sample if it earns a place, then vote with the updated memory.
    pub fn step(&mut self, probs: [T; 2], feature: &[T]) -> Result<MepPrediction<T>> {
        let c_i = entropy(&probs)?;
        check_feature(feature, self.d_f)?;
        let pse = argmax2(&probs);
        let c = pse as usize;

        if self.fill(c) < self.capacity {
            self.features[c].extend_from_slice(feature);
            self.entropies[c].push(c_i);
        } else {
            let j = self.max_slot(c);
            if c_i < self.entropies[c][j] {
                self.entropies[c][j] = c_i;
                self.features[c][j * self.d_f..(j + 1) * self.d_f].copy_from_slice(feature);
            }
        }
        self.samples_seen += 1;

        let logits = [0, 1].map(|ch| similarity_sum(feature, self.rows(ch)));
        let final_probs = vote(logits, [self.fill(0), self.fill(1)], self.vote)?;
        Ok(MepPrediction {
            pseudo_label: pse,
            entropy: c_i,
            classifier_probs: probs,
            final_probs,
            final_label: argmax2(&final_probs),
        })
    }
}

/// Fold [`MemoryState::step`] over a stream in order.
pub fn mep_run<T: Scalar>(stream: &[([T; 2], Vec<T>)], capacity: usize, d_f: usize) -> Result<Vec<MepPrediction<T>>> {
    mep_run_with(stream, capacity, d_f, Vote::Sum)
}

pub fn mep_run_with<T: Scalar>(
    stream: &[([T; 2], Vec<T>)],
    capacity: usize,
    d_f: usize,
    vote: Vote,
) -> Result<Vec<MepPrediction<T>>> {
    let mut state = MemoryState::with_vote(capacity, d_f, vote)?;
    stream.iter().map(|(p, h)| state.step(*p, h)).collect()
}
