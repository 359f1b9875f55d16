use crate::error::{Error, Result};
use crate::numerics::{Tensor, Var, PROB_CLAMP};
use crate::scalar::Scalar;

/// Binary cross-entropy over `N × 2` probabilities:
/// `-(1/N) Σ [y log p1 + (1-y) log p0]`, probabilities clamped first.
pub fn loss_bce<'t, T: Scalar>(probs: Var<'t, T>, labels: &[u8]) -> Result<Var<'t, T>> {
    let tape = probs.tape();
    let n = labels.len();
    if n == 0 {
        return Err(Error::invalid("loss_bce on an empty batch"));
    }
    if probs.shape() != [n, 2] {
        return Err(Error::shape(
            "loss_bce",
            format!("probs {:?} for {n} labels", probs.shape()),
        ));
    }
    let mut pick = vec![T::zero(); n * 2];
    for (i, &y) in labels.iter().enumerate() {
        if y > 1 {
            return Err(Error::invalid(format!("label {y} is not binary")));
        }
        pick[i * 2 + y as usize] = T::one();
    }
    let pick = tape.constant(Tensor::from_parts(vec![n, 2], pick));
    let logp = probs.clamp(T::lit(PROB_CLAMP), T::lit(1.0 - PROB_CLAMP))?.log()?;
    logp.mul(pick)?.sum()?.scale(-T::one() / T::lit(n as f64))
}

fn select_rows<'t, T: Scalar>(feats: Var<'t, T>, rows: &[usize]) -> Result<Var<'t, T>> {
    let n = feats.rows();
    let mut s = vec![T::zero(); rows.len() * n];
    for (k, &r) in rows.iter().enumerate() {
        s[k * n + r] = T::one();
    }
    feats
        .tape()
        .constant(Tensor::from_parts(vec![rows.len(), n], s))
        .matmul(feats)
}

fn one_minus_mean<'t, T: Scalar>(m: Var<'t, T>) -> Result<Var<'t, T>> {
    let ones = m.tape().constant(Tensor::full(m.shape(), T::one()));
    ones.sub(m)?.mean()
}

/// Label-aware cosine loss over unit rows:
/// `mean(P·Nᵀ) + mean(1 - P·Pᵀ) + mean(1 - N·Nᵀ)`.
/// A term whose row set is empty contributes 0.
pub fn loss_proj<'t, T: Scalar>(feats: Var<'t, T>, labels: &[u8]) -> Result<Var<'t, T>> {
    let tape = feats.tape();
    if feats.rows() != labels.len() {
        return Err(Error::shape(
            "loss_proj",
            format!("{} feature rows for {} labels", feats.rows(), labels.len()),
        ));
    }
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    let hp = if pos.is_empty() {
        None
    } else {
        Some(select_rows(feats, &pos)?)
    };
    let hn = if neg.is_empty() {
        None
    } else {
        Some(select_rows(feats, &neg)?)
    };
    let mut terms = Vec::new();
    if let (Some(p), Some(n)) = (hp, hn) {
        terms.push(p.matmul_t(n)?.mean()?);
    }
    if let Some(p) = hp {
        terms.push(one_minus_mean(p.matmul_t(p)?)?);
    }
    if let Some(n) = hn {
        terms.push(one_minus_mean(n.matmul_t(n)?)?);
    }
    let mut it = terms.into_iter();
    match it.next() {
        None => Ok(tape.constant(Tensor::scalar(T::zero()))),
        Some(first) => it.try_fold(first, |acc, t| acc.add(t)),
    }
}

/// `L = L_c + L_p`.
pub fn loss_joint<'t, T: Scalar>(classification: Var<'t, T>, projection: Var<'t, T>) -> Result<Var<'t, T>> {
    classification.add(projection)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tape;

    fn probs<'t>(t: &'t Tape<f64>, rows: &[[f64; 2]]) -> Var<'t, f64> {
        t.constant(Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap())
    }

    fn feats<'t>(t: &'t Tape<f64>, rows: &[&[f64]]) -> Var<'t, f64> {
        t.constant(Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap())
    }

    #[test]
    fn bce_uniform_is_ln2() {
        let t = Tape::new();
        let l = loss_bce(probs(&t, &[[0.5, 0.5], [0.5, 0.5]]), &[0, 1]).unwrap();
        assert!((l.value().item() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bce_confident_hits_clamp_floor() {
        let t = Tape::new();
        let l = loss_bce(probs(&t, &[[1.0, 0.0], [0.0, 1.0]]), &[0, 1]).unwrap();
        let want = -(1.0f64 - 1e-7).ln();
        assert!((l.value().item() - want).abs() < 1e-15);
        assert!((l.value().item() - 1e-7).abs() < 1e-13);
    }

    #[test]
    fn bce_single_sample() {
        let t = Tape::new();
        let l = loss_bce(probs(&t, &[[0.2, 0.8]]), &[1]).unwrap();
        assert!((l.value().item() - 0.223_143_551_314_209_7).abs() < 1e-12);
    }

    #[test]
    fn bce_empty_batch_errors() {
        let t = Tape::<f64>::new();
        let p = t.constant(Tensor::zeros(vec![0, 2]));
        assert!(loss_bce(p, &[]).is_err());
    }

    #[test]
    fn proj_identical_features() {
        let t = Tape::new();
        let f = feats(&t, &[&[0.6, 0.8], &[0.6, 0.8], &[0.6, 0.8]]);
        let l = loss_proj(f, &[1, 0, 1]).unwrap().value().item();
        assert!((l - 1.0).abs() < 1e-12);
    }

    #[test]
    fn proj_antipodal_optimum() {
        let t = Tape::new();
        let f = feats(&t, &[&[0.6, 0.8], &[-0.6, -0.8], &[0.6, 0.8], &[-0.6, -0.8]]);
        let l = loss_proj(f, &[1, 0, 1, 0]).unwrap().value().item();
        assert!((l + 1.0).abs() < 1e-12);
    }

    #[test]
    fn proj_orthogonal() {
        let t = Tape::new();
        let f = feats(&t, &[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(loss_proj(f, &[1, 0]).unwrap().value().item(), 0.0);
    }

    #[test]
    fn proj_single_class_batch() {
        let t = Tape::new();
        let f = feats(&t, &[&[1.0, 0.0], &[0.0, 1.0]]);
        // only the positive within-class term: mean(1 - [[1,0],[0,1]]) = 0.5
        assert!((loss_proj(f, &[1, 1]).unwrap().value().item() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn joint_is_sum() {
        let t = Tape::new();
        let a = t.constant(Tensor::scalar(std::f64::consts::LN_2));
        let b = t.constant(Tensor::scalar(1.0));
        assert_eq!(loss_joint(a, b).unwrap().value().item(), std::f64::consts::LN_2 + 1.0);
        let z = t.constant(Tensor::scalar(0.0));
        assert_eq!(loss_joint(a, z).unwrap().value().item(), std::f64::consts::LN_2);
    }
}
