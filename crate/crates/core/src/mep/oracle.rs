use std::cmp::Ordering;

use super::{argmax2, check_feature, entropy, similarity_sum, vote, MepPrediction, Vote};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Independent re-derivation of [`super::mep_run`].
///
/// Memory is kept as a map from slot to stream index rather than copied
/// rows. The eviction victim is found by fully sorting the channel on
/// (entropy desc, slot asc) every step, and votes sum over retained
/// samples in stream order.
pub fn mep_oracle<T: Scalar>(
    stream: &[([T; 2], Vec<T>)],
    capacity: usize,
    d_f: usize,
) -> Result<Vec<MepPrediction<T>>> {
    if capacity == 0 {
        return Err(Error::invalid("memory size L must be at least 1"));
    }
    let mut slots: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    let mut entropies = Vec::with_capacity(stream.len());
    let mut out = Vec::with_capacity(stream.len());

    for (i, (probs, feature)) in stream.iter().enumerate() {
        let c_i = entropy(probs)?;
        check_feature(feature, d_f)?;
        entropies.push(c_i);
        let c = argmax2(probs) as usize;

        if slots[c].len() < capacity {
            slots[c].push(i);
        } else {
            let mut order: Vec<(usize, usize)> = slots[c].iter().copied().enumerate().collect();
            order.sort_by(|(sa, ia), (sb, ib)| {
                entropies[*ib]
                    .partial_cmp(&entropies[*ia])
                    .unwrap_or(Ordering::Equal)
                    .then(sa.cmp(sb))
            });
            let (victim_slot, victim) = order[0];
            if c_i < entropies[victim] {
                slots[c][victim_slot] = i;
            }
        }

        let logits = [0, 1].map(|ch| {
            let mut members = slots[ch].clone();
            members.sort_unstable();
            similarity_sum(feature, members.iter().map(|&k| stream[k].1.as_slice()))
        });
        let final_probs = vote(logits, [slots[0].len(), slots[1].len()], Vote::Sum)?;
        out.push(MepPrediction {
            pseudo_label: c as u8,
            entropy: c_i,
            classifier_probs: *probs,
            final_probs,
            final_label: argmax2(&final_probs),
        });
    }
    Ok(out)
}
