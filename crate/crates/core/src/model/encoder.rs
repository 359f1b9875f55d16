use crate::error::{Error, Result};
use crate::numerics::{Axis, ParamId, ParamStore, Tape, Tensor, Var};
use crate::scalar::Scalar;

use super::layers::{Block, LayerNormParams, Linear};

/// Splits a square image (row-major, `side × side`) into non-overlapping
/// `patch × patch` tiles, one flattened row per tile, tiles in row-major order.
pub fn patchify<T: Scalar>(image: &[T], side: usize, patch: usize) -> Result<Tensor<T>> {
    if image.len() != side * side {
        return Err(Error::shape(
            "patchify",
            format!("image has {} values, expected {side}x{side}", image.len()),
        ));
    }
    if patch == 0 || !side.is_multiple_of(patch) {
        return Err(Error::shape(
            "patchify",
            format!("patch {patch} does not tile side {side}"),
        ));
    }
    let g = side / patch;
    let mut data = Vec::with_capacity(side * side);
    for gy in 0..g {
        for gx in 0..g {
            for y in 0..patch {
                let row = (gy * patch + y) * side + gx * patch;
                data.extend_from_slice(&image[row..row + patch]);
            }
        }
    }
    Ok(Tensor::from_parts(vec![g * g, patch * patch], data))
}

/// Transformer stack shared by both modalities.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub blocks: Vec<Block>,
    pub ln_final: LayerNormParams,
    pub top_n: usize,
}

impl Encoder {
    pub fn n_layers(&self) -> usize {
        self.blocks.len()
    }

    /// First layer index that is conditioned / LoRA-adapted.
    pub fn first_top_layer(&self) -> usize {
        self.blocks.len() - self.top_n
    }

    /// Runs blocks `[from, to)` without conditioning.
    pub fn run_range<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        mut x: Var<'t, T>,
        from: usize,
        to: usize,
    ) -> Result<Var<'t, T>> {
        for block in &self.blocks[from..to] {
            x = block.forward(tape, store, x, None)?;
        }
        Ok(x)
    }

    /// Runs blocks from `from` to the end and applies the final norm. A
    /// condition, when given, is fed to every top layer.
    pub fn finish<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        mut x: Var<'t, T>,
        from: usize,
        condition: Option<Var<'t, T>>,
    ) -> Result<Var<'t, T>> {
        let top = self.first_top_layer();
        for (i, block) in self.blocks.iter().enumerate().skip(from) {
            let c = if i >= top { condition } else { None };
            x = block.forward(tape, store, x, c)?;
        }
        self.ln_final.forward(tape, store, x)
    }
}

#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub token_embedding: ParamId,
    pub position_embedding: ParamId,
    pub encoder: Encoder,
}

impl TextEncoder {
    pub fn embed<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        tokens: &[usize],
    ) -> Result<Var<'t, T>> {
        let table = store.value(self.token_embedding);
        let vocab = table.rows();
        let max_len = store.value(self.position_embedding).rows();
        if tokens.is_empty() || tokens.len() > max_len {
            return Err(Error::shape(
                "encode_text",
                format!("token sequence length {} not in 1..={max_len}", tokens.len()),
            ));
        }
        let mut onehot = vec![T::zero(); tokens.len() * vocab];
        for (i, &t) in tokens.iter().enumerate() {
            if t >= vocab {
                return Err(Error::shape(
                    "encode_text",
                    format!("token id {t} >= vocab size {vocab}"),
                ));
            }
            onehot[i * vocab + t] = T::one();
        }
        let onehot = tape.constant(Tensor::from_parts(vec![tokens.len(), vocab], onehot));
        let x = onehot.matmul(tape.param(store, self.token_embedding))?;
        let pos = tape.param(store, self.position_embedding).slice_rows(0, tokens.len())?;
        x.add(pos)
    }

    /// `F_t` when `condition` is `None`, otherwise the conditioned `F̃_t`.
    /// `condition` must be `(m+1) × d_v` (zero rows allowed).
    pub fn encode<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        tokens: &[usize],
        condition: Option<Var<'t, T>>,
    ) -> Result<Var<'t, T>> {
        let x = self.embed(tape, store, tokens)?;
        self.encoder.finish(tape, store, x, 0, condition)
    }
}

#[derive(Clone, Debug)]
pub struct VisionEncoder {
    pub patch_embedding: Linear,
    pub cls_embedding: ParamId,
    pub position_embedding: ParamId,
    pub ln_pre: LayerNormParams,
    pub encoder: Encoder,
}

impl VisionEncoder {
    /// Linear embedding of each patch row, before cls and positions.
    pub fn patch_embeddings<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        patches: &Tensor<T>,
    ) -> Result<Var<'t, T>> {
        let expect = store.value(self.patch_embedding.weight).cols();
        let m = store.value(self.position_embedding).rows() - 1;
        if patches.shape() != [m, expect] {
            return Err(Error::shape(
                "patchify",
                format!("patches {:?}, expected [{m}, {expect}]", patches.shape()),
            ));
        }
        self.patch_embedding
            .forward(tape, store, tape.constant(patches.clone()))
    }

    /// `[cls; patches] + positions`, pre-normalised: `(m+1) × d_v`.
    pub fn embed<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        patches: &Tensor<T>,
    ) -> Result<Var<'t, T>> {
        let p = self.patch_embeddings(tape, store, patches)?;
        let x = tape.concat(&[tape.param(store, self.cls_embedding), p], Axis::Rows)?;
        let x = x.add(tape.param(store, self.position_embedding))?;
        self.ln_pre.forward(tape, store, x)
    }

    pub fn encode<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        patches: &Tensor<T>,
        condition: Option<Var<'t, T>>,
    ) -> Result<Var<'t, T>> {
        let x = self.embed(tape, store, patches)?;
        self.encoder.finish(tape, store, x, 0, condition)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_layout() {
        let img: Vec<f64> = (0..16).map(f64::from).collect();
        let p = patchify(&img, 4, 2).unwrap();
        assert_eq!(p.shape(), &[4, 4]);
        assert_eq!(p.row(0), &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(p.row(1), &[2.0, 3.0, 6.0, 7.0]);
        assert_eq!(p.row(3), &[10.0, 11.0, 14.0, 15.0]);
    }

    #[test]
    fn patch_count_32_by_8() {
        let p = patchify(&vec![0.0f32; 32 * 32], 32, 8).unwrap();
        assert_eq!(p.rows(), 16);
    }

    #[test]
    fn patchify_rejects_bad_dims() {
        assert!(patchify(&[0.0f64; 15], 4, 2).is_err());
        assert!(patchify(&[0.0f64; 16], 4, 3).is_err());
    }
}
