use crate::error::Result;
use crate::numerics::{ParamStore, Tape, Var};
use crate::scalar::Scalar;

use super::layers::{Builder, Linear};

/// Two-layer perceptron with a GELU hidden layer.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub(crate) fn build<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
        zero_last: bool,
    ) -> Result<Self> {
        let fc1 = Linear::build(b, &format!("{name}.fc1"), d_in, d_hidden, true, true)?;
        let fc2 = if zero_last {
            Linear::build_zero(b, &format!("{name}.fc2"), d_hidden, d_out, true)?
        } else {
            Linear::build(b, &format!("{name}.fc2"), d_hidden, d_out, true, true)?
        };
        Ok(Self { fc1, fc2 })
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let h = self.fc1.forward(tape, store, x)?.gelu()?;
        self.fc2.forward(tape, store, h)
    }
}

/// Class probabilities `N × 2`; column 1 is "sarcastic".
pub fn classify<'t, T: Scalar>(
    head: &Mlp,
    tape: &'t Tape<T>,
    store: &ParamStore<T>,
    fused: Var<'t, T>,
) -> Result<Var<'t, T>> {
    head.forward(tape, store, fused)?.softmax()
}

/// Unit-norm projection features `N × d_f`.
pub fn project<'t, T: Scalar>(
    head: &Mlp,
    tape: &'t Tape<T>,
    store: &ParamStore<T>,
    fused: Var<'t, T>,
) -> Result<Var<'t, T>> {
    head.forward(tape, store, fused)?.l2_normalize()
}
