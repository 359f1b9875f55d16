//! The dual-encoder model: embeddings, vanilla and conditioned transformer
//! stacks, LoRA adapters, fusion, and the classification/projection heads.

mod checkpoint;
mod config;
mod encoder;
mod heads;
mod layers;
mod loss;
mod vocab;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointManifest, ParamEntry};
pub use config::{format_lora_targets, parse_lora_targets, AttnWeight, InteractionMode, ModelConfig};
pub use encoder::{patchify, Encoder, TextEncoder, VisionEncoder};
pub use heads::{classify, project, Mlp};
pub use layers::{
    conditional_attention, lora_forward, lora_merged_weight, AttnProj, Block, ConditionalParams, LayerNormParams,
    Linear, LoraFactors,
};
pub use loss::{loss_bce, loss_joint, loss_proj};
pub use vocab::{tokenize, Vocab, BOS, EOS, UNK};

use crate::error::{Error, Result};
use crate::numerics::{Axis, ParamGroup, ParamStore, Tape, Tensor, Var};
use crate::scalar::Scalar;

use layers::{BlockSpec, Builder, Init};

/// One sample prepared for the encoders.
#[derive(Clone, Debug)]
pub struct ModelInput<T> {
    pub tokens: Vec<usize>,
    /// `m × patch_size²`, see [`patchify`].
    pub patches: Tensor<T>,
}

impl<T: Scalar> ModelInput<T> {
    pub fn new(text: &str, image: &[T], vocab: &Vocab, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            tokens: tokenize(text, vocab, cfg.max_text_len),
            patches: patchify(image, cfg.image_side, cfg.patch_size)?,
        })
    }
}

/// Hidden states after the frozen lower layers of each encoder. Valid only
/// for the parameter values they were computed from.
#[derive(Clone, Debug)]
pub struct PrefixStates<T> {
    pub text: Tensor<T>,
    pub vision: Tensor<T>,
}

/// Encoder representations for one sample. Vanilla outputs are present
/// whenever the interaction mode needs them (for fusion or as a condition).
pub struct EncoderOutput<'t, T: Scalar> {
    pub f_t: Option<Var<'t, T>>,
    pub f_v: Option<Var<'t, T>>,
    pub tilde_f_t: Option<Var<'t, T>>,
    pub tilde_f_v: Option<Var<'t, T>>,
    /// `1 × (d_t + d_v)`.
    pub fused: Var<'t, T>,
}

/// Concatenates the text eos row and the vision cls row chosen by `mode`.
pub fn fuse<'t, T: Scalar>(
    mode: InteractionMode,
    f_t: Option<Var<'t, T>>,
    f_v: Option<Var<'t, T>>,
    tilde_f_t: Option<Var<'t, T>>,
    tilde_f_v: Option<Var<'t, T>>,
) -> Result<Var<'t, T>> {
    let missing = |what: &str| Error::invalid(format!("{mode} fusion needs {what}"));
    let text = if mode.conditions_text() {
        tilde_f_t.ok_or_else(|| missing("the interactive text representation"))?
    } else {
        f_t.ok_or_else(|| missing("the vanilla text representation"))?
    };
    let vision = if mode.conditions_vision() {
        tilde_f_v.ok_or_else(|| missing("the interactive vision representation"))?
    } else {
        f_v.ok_or_else(|| missing("the vanilla vision representation"))?
    };
    let eos = text.slice_rows(text.rows() - 1, 1)?;
    let cls = vision.slice_rows(0, 1)?;
    text.tape().concat(&[eos, cls], Axis::Cols)
}

/// Parameter layout of the model; holds ids only, values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Architecture {
    pub config: ModelConfig,
    pub text: TextEncoder,
    pub vision: VisionEncoder,
    pub classifier: Mlp,
    pub projector: Option<Mlp>,
}

impl Architecture {
    /// Allocates and initialises every parameter into `store`.
    pub fn build<T: Scalar>(config: &ModelConfig, seed: u64, store: &mut ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let mut init = Init::new(seed);
        let mut b = Builder { store, init: &mut init };
        let c = config;
        let backbone = !c.freeze_backbone;
        let lora = (c.lora_rank > 0).then(|| (c.lora_rank, c.lora_scale(), &c.lora_targets));

        let stack = |b: &mut Builder<'_, T>,
                     prefix: &str,
                     d: usize,
                     d_other: usize,
                     layers: usize,
                     causal: bool,
                     conditioned: bool|
         -> Result<Encoder> {
            let top = layers - c.top_n;
            let blocks = (0..layers)
                .map(|i| {
                    Block::build(
                        b,
                        &BlockSpec {
                            name: &format!("{prefix}.layers.{i}"),
                            d,
                            d_other,
                            n_heads: c.n_heads,
                            causal,
                            frozen: !backbone,
                            lora: if i >= top { lora } else { None },
                            conditional: conditioned && i >= top,
                        },
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            let ln_final = LayerNormParams::build(b, &format!("{prefix}.ln_final"), d, backbone)?;
            Ok(Encoder {
                blocks,
                ln_final,
                top_n: c.top_n,
            })
        };

        let token_embedding = b.normal("text.token_embedding".into(), vec![c.vocab_size, c.d_t], 1.0, backbone)?;
        let position_embedding = b.normal(
            "text.position_embedding".into(),
            vec![c.max_text_len, c.d_t],
            0.5,
            backbone,
        )?;
        let text_enc = stack(
            &mut b,
            "text",
            c.d_t,
            c.d_v,
            c.n_layers_text,
            true,
            c.interaction_mode.conditions_text(),
        )?;
        let text = TextEncoder {
            token_embedding,
            position_embedding,
            encoder: text_enc,
        };

        let pp = c.patch_size * c.patch_size;
        let patch_embedding = Linear::build(&mut b, "vision.patch_embedding", pp, c.d_v, false, backbone)?;
        let cls_embedding = b.normal("vision.cls_embedding".into(), vec![1, c.d_v], 1.0, backbone)?;
        let vpos = b.normal(
            "vision.position_embedding".into(),
            vec![c.patch_count() + 1, c.d_v],
            1.0,
            backbone,
        )?;
        let ln_pre = LayerNormParams::build(&mut b, "vision.ln_pre", c.d_v, backbone)?;
        let vis_enc = stack(
            &mut b,
            "vision",
            c.d_v,
            c.d_t,
            c.n_layers_vision,
            false,
            c.interaction_mode.conditions_vision(),
        )?;
        let vision = VisionEncoder {
            patch_embedding,
            cls_embedding,
            position_embedding: vpos,
            ln_pre,
            encoder: vis_enc,
        };

        let d = c.fused_dim();
        let classifier = Mlp::build(&mut b, "head.classifier", d, d, 2, true)?;
        let projector = if c.projection_head {
            Some(Mlp::build(&mut b, "head.projector", d, d, c.d_f, false)?)
        } else {
            None
        };
        Ok(Self {
            config: config.clone(),
            text,
            vision,
            classifier,
            projector,
        })
    }

    /// Number of lower layers per encoder `(text, vision)` whose output is a
    /// constant of the input (no trainable parameter upstream).
    pub fn frozen_prefix(&self) -> Option<(usize, usize)> {
        self.config.freeze_backbone.then(|| {
            (
                self.text.encoder.first_top_layer(),
                self.vision.encoder.first_top_layer(),
            )
        })
    }

    /// Hidden states after the frozen lower layers; `None` if the backbone trains.
    pub fn prefix_states<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        input: &ModelInput<T>,
    ) -> Result<Option<PrefixStates<T>>> {
        let Some((lt, lv)) = self.frozen_prefix() else {
            return Ok(None);
        };
        let tape = Tape::new();
        let xt = self.text.embed(&tape, store, &input.tokens)?;
        let text = self.text.encoder.run_range(&tape, store, xt, 0, lt)?.value();
        let xv = self.vision.embed(&tape, store, &input.patches)?;
        let vision = self.vision.encoder.run_range(&tape, store, xv, 0, lv)?.value();
        Ok(Some(PrefixStates { text, vision }))
    }

    fn text_from<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        input: &ModelInput<T>,
        prefix: Option<&PrefixStates<T>>,
        condition: Option<Var<'t, T>>,
    ) -> Result<Var<'t, T>> {
        match (prefix, self.frozen_prefix()) {
            (Some(p), Some((lt, _))) => {
                self.text
                    .encoder
                    .finish(tape, store, tape.constant(p.text.clone()), lt, condition)
            }
            _ => self.text.encode(tape, store, &input.tokens, condition),
        }
    }

    fn vision_from<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        input: &ModelInput<T>,
        prefix: Option<&PrefixStates<T>>,
        condition: Option<Var<'t, T>>,
    ) -> Result<Var<'t, T>> {
        match (prefix, self.frozen_prefix()) {
            (Some(p), Some((_, lv))) => {
                self.vision
                    .encoder
                    .finish(tape, store, tape.constant(p.vision.clone()), lv, condition)
            }
            _ => self.vision.encode(tape, store, &input.patches, condition),
        }
    }

    /// Runs the passes the interaction mode needs and fuses the result.
    /// Conditions are always the other encoder's vanilla output.
    pub fn encode<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        input: &ModelInput<T>,
        prefix: Option<&PrefixStates<T>>,
    ) -> Result<EncoderOutput<'t, T>> {
        let mode = self.config.interaction_mode;
        let need_ft = !mode.conditions_text() || mode.conditions_vision();
        let need_fv = !mode.conditions_vision() || mode.conditions_text();
        let f_t = need_ft
            .then(|| self.text_from(tape, store, input, prefix, None))
            .transpose()?;
        let f_v = need_fv
            .then(|| self.vision_from(tape, store, input, prefix, None))
            .transpose()?;
        let tilde_f_t = if mode.conditions_text() {
            Some(self.text_from(tape, store, input, prefix, f_v)?)
        } else {
            None
        };
        let tilde_f_v = if mode.conditions_vision() {
            Some(self.vision_from(tape, store, input, prefix, f_t)?)
        } else {
            None
        };
        let fused = fuse(mode, f_t, f_v, tilde_f_t, tilde_f_v)?;
        Ok(EncoderOutput {
            f_t,
            f_v,
            tilde_f_t,
            tilde_f_v,
            fused,
        })
    }

    /// Fused features for a batch, `N × (d_t + d_v)`.
    pub fn fused_batch<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        inputs: &[&ModelInput<T>],
        prefixes: Option<&[&PrefixStates<T>]>,
    ) -> Result<Var<'t, T>> {
        if inputs.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let rows = inputs
            .iter()
            .enumerate()
            .map(|(i, inp)| Ok(self.encode(tape, store, inp, prefixes.map(|p| p[i]))?.fused))
            .collect::<Result<Vec<_>>>()?;
        tape.concat(&rows, Axis::Rows)
    }

    pub fn classify<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        fused: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        self.check_width(&fused)?;
        classify(&self.classifier, tape, store, fused)
    }

    pub fn project<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        fused: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        self.check_width(&fused)?;
        let head = self
            .projector
            .as_ref()
            .ok_or_else(|| Error::invalid("model was built without a projection head"))?;
        project(head, tape, store, fused)
    }

    fn check_width<T: Scalar>(&self, fused: &Var<'_, T>) -> Result<()> {
        if fused.cols() != self.config.fused_dim() {
            return Err(Error::shape(
                "heads",
                format!(
                    "fused width {} vs d_t + d_v = {}",
                    fused.cols(),
                    self.config.fused_dim()
                ),
            ));
        }
        Ok(())
    }

    /// Losses for one labelled batch. With no projection head the
    /// projection term is absent and `L = L_c`.
    pub fn batch_loss<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        inputs: &[&ModelInput<T>],
        prefixes: Option<&[&PrefixStates<T>]>,
        labels: &[u8],
    ) -> Result<BatchLoss<'t, T>> {
        let fused = self.fused_batch(tape, store, inputs, prefixes)?;
        let probs = self.classify(tape, store, fused)?;
        let classification = loss_bce(probs, labels)?;
        let projection = match self.projector {
            Some(_) => Some(loss_proj(self.project(tape, store, fused)?, labels)?),
            None => None,
        };
        let total = match projection {
            Some(p) => loss_joint(classification, p)?,
            None => classification,
        };
        Ok(BatchLoss {
            classification,
            projection,
            total,
        })
    }
}

pub struct BatchLoss<'t, T: Scalar> {
    pub classification: Var<'t, T>,
    pub projection: Option<Var<'t, T>>,
    pub total: Var<'t, T>,
}

/// Classifier probabilities and (when present) projection feature for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction<T> {
    pub probs: [T; 2],
    pub feature: Option<Vec<T>>,
}

/// Architecture plus parameter values.
#[derive(Clone, Debug)]
pub struct InterClip<T> {
    pub arch: Architecture,
    pub store: ParamStore<T>,
}

impl<T: Scalar> InterClip<T> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let arch = Architecture::build(config, seed, &mut store)?;
        Ok(Self { arch, store })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    /// Forward pass for inference.
    pub fn predict(&self, input: &ModelInput<T>) -> Result<Prediction<T>> {
        let tape = Tape::new();
        let fused = self.arch.encode(&tape, &self.store, input, None)?.fused;
        let p = self.arch.classify(&tape, &self.store, fused)?.value();
        let feature = match self.arch.projector {
            Some(_) => Some(self.arch.project(&tape, &self.store, fused)?.value().into_data()),
            None => None,
        };
        Ok(Prediction {
            probs: [p.data()[0], p.data()[1]],
            feature,
        })
    }

    pub fn lora_param_count(&self) -> usize {
        self.store.iter().filter(|(_, p)| p.group == ParamGroup::Lora).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro_input(cfg: &ModelConfig, seed: u64) -> ModelInput<f64> {
        let mut init = Init::new(seed);
        let img: Tensor<f64> = init.normal(vec![cfg.image_side * cfg.image_side], 0.3);
        let img: Vec<f64> = img.data().iter().map(|x| (x + 0.5).clamp(0.0, 1.0)).collect();
        ModelInput {
            tokens: vec![0, 3, 5, 4, 1],
            patches: patchify(&img, cfg.image_side, cfg.patch_size).unwrap(),
        }
    }

    #[test]
    fn fused_width_for_every_mode() {
        for mode in InteractionMode::ALL {
            let cfg = ModelConfig::micro(mode);
            let m = InterClip::<f64>::new(&cfg, 1).unwrap();
            let tape = Tape::new();
            let out = m.arch.encode(&tape, &m.store, &micro_input(&cfg, 2), None).unwrap();
            assert_eq!(out.fused.shape(), vec![1, cfg.d_t + cfg.d_v]);
        }
    }

    #[test]
    fn fuse_reports_missing_parts() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(vec![3, 4]));
        assert!(fuse(InteractionMode::T2v, Some(a), Some(a), None, None).is_err());
        assert!(fuse(InteractionMode::None, Some(a), None, None, None).is_err());
        let f = fuse(InteractionMode::None, Some(a), Some(a), None, None).unwrap();
        assert_eq!(f.shape(), vec![1, 8]);
    }

    #[test]
    fn prefix_cache_matches_full_pass() {
        let cfg = ModelConfig {
            n_layers_text: 3,
            n_layers_vision: 3,
            ..ModelConfig::micro(InteractionMode::Tw)
        };
        let m = InterClip::<f64>::new(&cfg, 5).unwrap();
        let inp = micro_input(&cfg, 9);
        let pre = m.arch.prefix_states(&m.store, &inp).unwrap().unwrap();
        let t1 = Tape::new();
        let full = m.arch.encode(&t1, &m.store, &inp, None).unwrap().fused.value();
        let t2 = Tape::new();
        let cached = m.arch.encode(&t2, &m.store, &inp, Some(&pre)).unwrap().fused.value();
        assert_eq!(full, cached);
    }

    #[test]
    fn classifier_starts_uniform() {
        let cfg = ModelConfig::micro(InteractionMode::T2v);
        let m = InterClip::<f64>::new(&cfg, 1).unwrap();
        let p = m.predict(&micro_input(&cfg, 4)).unwrap();
        assert_eq!(p.probs, [0.5, 0.5]);
        let f = p.feature.unwrap();
        assert!((f.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
