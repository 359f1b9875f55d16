//! Central finite-difference check of tape gradients.

use super::{Gradients, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
}

/// Compares analytic gradients against central differences for every
/// trainable entry of `store`. Frozen parameters are not reported.
///
/// The error of one entry is `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn finite_diff_check<F>(store: &mut ParamStore<f64>, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &ParamStore<f64>) -> Result<Var<'t, f64>>,
{
    finite_diff_check_with(store, eps, f, |_| {})
}

/// As [`finite_diff_check`], with a hook that may alter the analytic
/// gradients before comparison (used for negative controls).
pub fn finite_diff_check_with<F, H>(store: &mut ParamStore<f64>, eps: f64, f: F, hook: H) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &ParamStore<f64>) -> Result<Var<'t, f64>>,
    H: FnOnce(&mut Gradients<f64>),
{
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("finite-difference step {eps}")));
    }
    let mut analytic = {
        let tape = Tape::new();
        let loss = f(&tape, store)?;
        tape.backward(loss)?
    };
    hook(&mut analytic);

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let tape = Tape::new();
        let v = f(&tape, s)?.value().item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("finite difference"))
        }
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    let ids: Vec<ParamId> = store.trainable_ids();
    for id in ids {
        let n = store.value(id).numel();
        for j in 0..n {
            let orig = store.value(id).data()[j];
            store.get_mut(id).value.data_mut()[j] = orig + eps;
            let up = eval(store);
            store.get_mut(id).value.data_mut()[j] = orig - eps;
            let down = eval(store);
            store.get_mut(id).value.data_mut()[j] = orig;
            let numeric = (up? - down?) / (2.0 * eps);
            let a = analytic.get(id).map_or(0.0, |g| g.data()[j]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.entries_checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((store.get(id).name.clone(), j));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{ParamGroup, Tensor};

    #[test]
    fn square_passes() {
        let mut s = ParamStore::new();
        let x = s.add("x", Tensor::scalar(1.0), true, ParamGroup::Base).unwrap();
        let r = finite_diff_check(&mut s, 1e-5, |t, s| {
            let v = t.param(s, x);
            v.mul(v)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-8, "{r:?}");
        assert_eq!(r.entries_checked, 1);
    }

    #[test]
    fn frozen_parameters_are_excluded() {
        let mut s = ParamStore::new();
        let w = s.add("w", Tensor::scalar(3.0), false, ParamGroup::Base).unwrap();
        let x = s.add("x", Tensor::scalar(1.0), true, ParamGroup::Base).unwrap();
        let r = finite_diff_check(&mut s, 1e-5, |t, s| t.param(s, w).mul(t.param(s, x))).unwrap();
        assert_eq!(r.entries_checked, 1);
        assert_eq!(r.worst.unwrap().0, "x");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let mut s = ParamStore::new();
        let x = s.add("x", Tensor::scalar(1.0), true, ParamGroup::Base).unwrap();
        let r = finite_diff_check_with(
            &mut s,
            1e-5,
            |t, s| t.param(s, x).tanh(),
            |g| g.get_mut(x).unwrap().data_mut()[0] += 0.01,
        )
        .unwrap();
        assert!(r.max_rel_error > 1e-4);
    }
}
