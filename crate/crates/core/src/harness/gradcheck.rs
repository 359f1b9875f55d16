use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::model::{patchify, InterClip, InteractionMode, ModelConfig, ModelInput};
use crate::numerics::{finite_diff_check_with, GradCheckReport, Tensor};

pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-4;

/// Micro model for `mode` with every all-zero trainable (gate scalars, LoRA
/// `B`, zero-initialised head layers, biases) replaced by small random
/// values so that each path carries gradient.
pub fn perturbed_micro_model(mode: InteractionMode, seed: u64) -> Result<InterClip<f64>> {
    let cfg = ModelConfig::micro(mode);
    let mut m = InterClip::<f64>::new(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    for id in m.store.trainable_ids() {
        let v = m.store.value(id);
        if v.data().iter().all(|x| *x == 0.0) {
            let data = (0..v.numel())
                .map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let t = Tensor::new(v.shape().to_vec(), data)?;
            m.store.set(id, t)?;
        }
    }
    Ok(m)
}

/// A small labelled batch for the micro configuration.
pub fn micro_batch(cfg: &ModelConfig, seed: u64) -> Result<(Vec<ModelInput<f64>>, Vec<u8>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = vec![0u8, 1, 1];
    let inputs = labels
        .iter()
        .map(|_| {
            let len = rng.random_range(2..=cfg.max_text_len - 2);
            let mut tokens = vec![0];
            tokens.extend((0..len).map(|_| rng.random_range(3..cfg.vocab_size)));
            tokens.push(1);
            let img: Vec<f64> = (0..cfg.image_side * cfg.image_side)
                .map(|_| rng.random::<f64>())
                .collect();
            Ok(ModelInput {
                tokens,
                patches: patchify(&img, cfg.image_side, cfg.patch_size)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((inputs, labels))
}

/// Finite-difference check of the joint loss over every trainable entry of
/// the micro model. `corrupt` perturbs one analytic gradient entry first.
pub fn model_gradcheck(mode: InteractionMode, seed: u64, corrupt: bool) -> Result<GradCheckReport> {
    let mut m = perturbed_micro_model(mode, seed)?;
    let (inputs, labels) = micro_batch(m.config(), seed + 1)?;
    let refs: Vec<&ModelInput<f64>> = inputs.iter().collect();
    let arch = &m.arch;
    finite_diff_check_with(
        &mut m.store,
        GRADCHECK_EPS,
        |tape, store| Ok(arch.batch_loss(tape, store, &refs, None, &labels)?.total),
        |g| {
            if corrupt {
                let first = g.iter().next().map(|(id, _)| id);
                if let Some(t) = first.and_then(|id| g.get_mut(id)) {
                    t.data_mut()[0] += 1e-2;
                }
            }
        },
    )
}
