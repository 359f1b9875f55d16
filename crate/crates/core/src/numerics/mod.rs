//! Tensors, reverse-mode differentiation, AdamW and the learning-rate schedule.

mod exact;
mod gradcheck;
mod kernels;
mod optim;
mod params;
mod schedule;
mod tape;
mod tensor;

pub use exact::exact_sum;
pub use gradcheck::{finite_diff_check, finite_diff_check_with, GradCheckReport};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Gradients, Param, ParamGroup, ParamId, ParamStore};
pub use schedule::LrSchedule;
pub use tape::{gelu, softmax_slice, Axis, Tape, Var, NORM_EPS};
pub use tensor::Tensor;

pub(crate) use tensor::ensure_finite;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Softmax of a plain vector.
pub fn softmax<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    softmax_slice(v)
}

/// Unit-length copy of `v`; rejects norms at or below [`NORM_EPS`].
pub fn l2_normalize<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    ensure_finite(v, "l2_normalize input")?;
    let n = v.iter().map(|x| *x * *x).sum::<T>().sqrt();
    if n.as_f64() <= NORM_EPS {
        return Err(Error::DegenerateNorm(n.as_f64()));
    }
    Ok(v.iter().map(|x| *x / n).collect())
}

/// Clamp floor/ceiling applied to probabilities before any logarithm.
pub const PROB_CLAMP: f64 = 1e-7;

pub fn clamp_prob<T: Scalar>(p: T) -> T {
    p.max(T::lit(PROB_CLAMP)).min(T::lit(1.0 - PROB_CLAMP))
}
