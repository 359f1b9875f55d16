use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::{Axis, ParamGroup, ParamId, ParamStore, Tape, Tensor, Var};
use crate::scalar::Scalar;

use super::config::AttnWeight;

pub(crate) const LN_EPS: f64 = 1e-5;
const MASKED: f64 = -1e9;

/// Seeded parameter initialiser.
pub(crate) struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn normal<T: Scalar>(&mut self, shape: Vec<usize>, std: f64) -> Tensor<T> {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                T::lit(z * std)
            })
            .collect();
        Tensor::from_parts(shape, data)
    }
}

/// Where new parameters go and whether they are trainable.
pub(crate) struct Builder<'a, T> {
    pub store: &'a mut ParamStore<T>,
    pub init: &'a mut Init,
}

impl<T: Scalar> Builder<'_, T> {
    pub fn add(&mut self, name: String, value: Tensor<T>, trainable: bool, group: ParamGroup) -> Result<ParamId> {
        self.store.add(name, value, trainable, group)
    }

    pub fn normal(&mut self, name: String, shape: Vec<usize>, std: f64, trainable: bool) -> Result<ParamId> {
        let v = self.init.normal(shape, std);
        self.add(name, v, trainable, ParamGroup::Base)
    }
}

/// Affine map `y = x·Wᵀ + b` with `W` stored as `out × in`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub(crate) fn build<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        trainable: bool,
    ) -> Result<Self> {
        let weight = b.normal(
            format!("{name}.weight"),
            vec![d_out, d_in],
            (d_in as f64).powf(-0.5),
            trainable,
        )?;
        let bias = if bias {
            Some(b.add(
                format!("{name}.bias"),
                Tensor::zeros(vec![d_out]),
                trainable,
                ParamGroup::Base,
            )?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub(crate) fn build_zero<T: Scalar>(
        b: &mut Builder<'_, T>,
        name: &str,
        d_in: usize,
        d_out: usize,
        trainable: bool,
    ) -> Result<Self> {
        let weight = b.add(
            format!("{name}.weight"),
            Tensor::zeros(vec![d_out, d_in]),
            trainable,
            ParamGroup::Base,
        )?;
        let bias = Some(b.add(
            format!("{name}.bias"),
            Tensor::zeros(vec![d_out]),
            trainable,
            ParamGroup::Base,
        )?);
        Ok(Self { weight, bias })
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let y = x.matmul_t(tape.param(store, self.weight))?;
        match self.bias {
            Some(b) => y.add(tape.param(store, b)),
            None => Ok(y),
        }
    }
}

/// Low-rank factors `A: r × d_in`, `B: d_out × r` added to a frozen matrix.
#[derive(Clone, Debug)]
pub struct LoraFactors {
    pub a: ParamId,
    pub b: ParamId,
    pub scale: f64,
}

/// `x · (W + (alpha/r)·B·A)ᵀ`, evaluated without forming the merged matrix.
pub fn lora_forward<'t, T: Scalar>(
    x: Var<'t, T>,
    base_w: Var<'t, T>,
    factors: Option<(Var<'t, T>, Var<'t, T>)>,
    alpha: f64,
    rank: usize,
) -> Result<Var<'t, T>> {
    let base = x.matmul_t(base_w)?;
    match factors {
        None => Ok(base),
        Some(_) if rank == 0 => Err(Error::invalid("LoRA rank 0 with non-empty factors")),
        Some((a, b)) => {
            if a.rows() != rank || b.cols() != rank {
                return Err(Error::shape(
                    "lora_forward",
                    format!("rank {rank} vs A {:?}, B {:?}", a.shape(), b.shape()),
                ));
            }
            let low = x.matmul_t(a)?.matmul_t(b)?.scale(T::lit(alpha / rank as f64))?;
            base.add(low)
        }
    }
}

/// `W + (alpha/r)·B·A` as a plain matrix.
pub fn lora_merged_weight<T: Scalar>(
    w: &Tensor<T>,
    a: &Tensor<T>,
    b: &Tensor<T>,
    alpha: f64,
    rank: usize,
) -> Result<Tensor<T>> {
    if rank == 0 {
        return Err(Error::invalid("LoRA rank 0 with non-empty factors"));
    }
    let tape = Tape::new();
    let delta = tape
        .constant(b.clone())
        .matmul(tape.constant(a.clone()))?
        .scale(T::lit(alpha / rank as f64))?;
    Ok(tape.constant(w.clone()).add(delta)?.value())
}

/// Attention projection, optionally LoRA-adapted.
#[derive(Clone, Debug)]
pub struct AttnProj {
    pub linear: Linear,
    pub lora: Option<LoraFactors>,
}

impl AttnProj {
    pub fn forward<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let w = tape.param(store, self.linear.weight);
        let y = match &self.lora {
            None => x.matmul_t(w)?,
            Some(l) => {
                let a = tape.param(store, l.a);
                let rank = store.value(l.a).rows();
                lora_forward(x, w, Some((a, tape.param(store, l.b))), l.scale * rank as f64, rank)?
            }
        };
        match self.linear.bias {
            Some(b) => y.add(tape.param(store, b)),
            None => Ok(y),
        }
    }
}

/// Per-layer parameters that let a layer attend to the other modality.
#[derive(Clone, Debug)]
pub struct ConditionalParams {
    /// Adapting projection from the other encoder's width.
    pub adapt: Linear,
    /// Gated projection running alongside the output projection.
    pub gate: Linear,
    /// Gating scalar, initialised to 0.
    pub beta: ParamId,
}

#[derive(Clone, Debug)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNormParams {
    pub(crate) fn build<T: Scalar>(b: &mut Builder<'_, T>, name: &str, d: usize, trainable: bool) -> Result<Self> {
        Ok(Self {
            gamma: b.add(
                format!("{name}.gamma"),
                Tensor::full(vec![d], T::one()),
                trainable,
                ParamGroup::Base,
            )?,
            beta: b.add(
                format!("{name}.beta"),
                Tensor::zeros(vec![d]),
                trainable,
                ParamGroup::Base,
            )?,
        })
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        x.layer_norm(
            tape.param(store, self.gamma),
            tape.param(store, self.beta),
            T::lit(LN_EPS),
        )
    }
}

/// Pre-norm transformer block: `x + Attn(LN(x))`, then `x + MLP(LN(x))`.
#[derive(Clone, Debug)]
pub struct Block {
    pub ln1: LayerNormParams,
    pub q: AttnProj,
    pub k: AttnProj,
    pub v: AttnProj,
    /// Output projection of the attention layer.
    pub o: AttnProj,
    pub ln2: LayerNormParams,
    pub fc1: Linear,
    pub fc2: Linear,
    pub n_heads: usize,
    pub causal: bool,
    pub cond: Option<ConditionalParams>,
}

pub(crate) struct BlockSpec<'a> {
    pub name: &'a str,
    pub d: usize,
    pub d_other: usize,
    pub n_heads: usize,
    pub causal: bool,
    pub frozen: bool,
    pub lora: Option<(usize, f64, &'a std::collections::BTreeSet<AttnWeight>)>,
    pub conditional: bool,
}

pub(crate) const MLP_RATIO: usize = 4;

impl Block {
    pub(crate) fn build<T: Scalar>(b: &mut Builder<'_, T>, s: &BlockSpec<'_>) -> Result<Self> {
        let trainable = !s.frozen;
        let d = s.d;
        let proj = |b: &mut Builder<'_, T>, w: AttnWeight| -> Result<AttnProj> {
            let linear = Linear::build(b, &format!("{}.attn.{}", s.name, w.as_str()), d, d, true, trainable)?;
            let lora = match s.lora {
                Some((rank, scale, targets)) if rank > 0 && targets.contains(&w) => {
                    let base = format!("{}.attn.{}.lora", s.name, w.as_str());
                    let a = b.init.normal(vec![rank, d], (d as f64).powf(-0.5));
                    let a = b.add(format!("{base}_a"), a, true, ParamGroup::Lora)?;
                    let bb = b.add(
                        format!("{base}_b"),
                        Tensor::zeros(vec![d, rank]),
                        true,
                        ParamGroup::Lora,
                    )?;
                    Some(LoraFactors { a, b: bb, scale })
                }
                _ => None,
            };
            Ok(AttnProj { linear, lora })
        };
        let ln1 = LayerNormParams::build(b, &format!("{}.ln1", s.name), d, trainable)?;
        let q = proj(b, AttnWeight::Q)?;
        let k = proj(b, AttnWeight::K)?;
        let v = proj(b, AttnWeight::V)?;
        let o = proj(b, AttnWeight::O)?;
        let ln2 = LayerNormParams::build(b, &format!("{}.ln2", s.name), d, trainable)?;
        let fc1 = Linear::build(b, &format!("{}.mlp.fc1", s.name), d, MLP_RATIO * d, true, trainable)?;
        let fc2 = Linear::build(b, &format!("{}.mlp.fc2", s.name), MLP_RATIO * d, d, true, trainable)?;
        let cond = if s.conditional {
            let adapt = Linear::build(b, &format!("{}.cond.adapt", s.name), s.d_other, d, true, true)?;
            let gate = Linear::build(b, &format!("{}.cond.gate", s.name), d, d, true, true)?;
            let beta = b.add(
                format!("{}.cond.beta", s.name),
                Tensor::zeros(vec![1]),
                true,
                ParamGroup::Base,
            )?;
            Some(ConditionalParams { adapt, gate, beta })
        } else {
            None
        };
        Ok(Self {
            ln1,
            q,
            k,
            v,
            o,
            ln2,
            fc1,
            fc2,
            n_heads: s.n_heads,
            causal: s.causal,
            cond,
        })
    }

    /// Multi-head attention of `h` (n × d) over keys/values `h ⊕ extra`,
    /// before the output projection. Only the first n query rows are
    /// computed, which is exactly the truncated result.
    fn attention_core<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        h: Var<'t, T>,
        extra: Option<Var<'t, T>>,
    ) -> Result<Var<'t, T>> {
        let n = h.rows();
        let d = h.cols();
        let kv_in = match extra {
            Some(e) => tape.concat(&[h, e], Axis::Rows)?,
            None => h,
        };
        let total = kv_in.rows();
        let q = self.q.forward(tape, store, h)?;
        let k = self.k.forward(tape, store, kv_in)?;
        let v = self.v.forward(tape, store, kv_in)?;
        let dh = d / self.n_heads;
        let mask = if self.causal {
            let mut m = vec![T::zero(); n * total];
            for i in 0..n {
                for j in (i + 1)..n {
                    m[i * total + j] = T::lit(MASKED);
                }
            }
            Some(tape.constant(Tensor::from_parts(vec![n, total], m)))
        } else {
            None
        };
        let scale = T::lit((dh as f64).powf(-0.5));
        let mut heads = Vec::with_capacity(self.n_heads);
        for hd in 0..self.n_heads {
            let qh = q.slice_cols(hd * dh, dh)?;
            let kh = k.slice_cols(hd * dh, dh)?;
            let vh = v.slice_cols(hd * dh, dh)?;
            let mut s = qh.matmul_t(kh)?.scale(scale)?;
            if let Some(m) = mask {
                s = s.add(m)?;
            }
            heads.push(s.softmax()?.matmul(vh)?);
        }
        if heads.len() == 1 {
            Ok(heads[0])
        } else {
            tape.concat(&heads, Axis::Cols)
        }
    }

    /// Self-attention sublayer output (before the residual add).
    ///
    /// With `condition = None` this is the vanilla layer. With a condition
    /// (rows in the other encoder's width) the adapted rows are appended as
    /// extra keys/values, exempt from the causal mask, and the gated branch
    /// `G(H')·tanh(beta)` is added to the output projection.
    pub fn attention<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        h: Var<'t, T>,
        condition: Option<Var<'t, T>>,
    ) -> Result<Var<'t, T>> {
        let Some(cond_in) = condition else {
            let core = self.attention_core(tape, store, h, None)?;
            return self.o.forward(tape, store, core);
        };
        let cp = self
            .cond
            .as_ref()
            .ok_or_else(|| Error::invalid("layer has no conditional parameters"))?;
        let d_other = store.value(cp.adapt.weight).cols();
        if cond_in.cols() != d_other {
            return Err(Error::shape(
                "conditional_attention",
                format!("condition width {} vs expected {d_other}", cond_in.cols()),
            ));
        }
        let extra = if cond_in.rows() == 0 {
            None
        } else {
            Some(cp.adapt.forward(tape, store, cond_in)?)
        };
        let core = self.attention_core(tape, store, h, extra)?;
        let main = self.o.forward(tape, store, core)?;
        let gated = cp.gate.forward(tape, store, core)?;
        let g = tape.param(store, cp.beta).tanh()?;
        main.add(gated.mul(g)?)
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        x: Var<'t, T>,
        condition: Option<Var<'t, T>>,
    ) -> Result<Var<'t, T>> {
        let h = self.ln1.forward(tape, store, x)?;
        let x = x.add(self.attention(tape, store, h, condition)?)?;
        let h = self.ln2.forward(tape, store, x)?;
        let h = self.fc1.forward(tape, store, h)?.gelu()?;
        x.add(self.fc2.forward(tape, store, h)?)
    }
}

/// `H'' = H(H') + G(H')·tanh(beta)` with `H' = Attn(H ⊕ F(F_cond))[:n]`.
pub fn conditional_attention<'t, T: Scalar>(
    tape: &'t Tape<T>,
    store: &ParamStore<T>,
    block: &Block,
    h: Var<'t, T>,
    f_cond: Var<'t, T>,
) -> Result<Var<'t, T>> {
    block.attention(tape, store, h, Some(f_cond))
}
