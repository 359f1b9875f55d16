use serde::{Deserialize, Serialize};

use super::{Gradients, ParamGroup, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    /// Base rate for every trainable outside the LoRA group.
    pub lr: f64,
    pub lora_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            lora_lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn base_lr(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Base => self.lr,
            ParamGroup::Lora => self.lora_lr,
        }
    }
}

/// AdamW with decoupled weight decay and bias-corrected moments.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub config: AdamWConfig,
    step_count: u64,
    ids: Vec<ParamId>,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamW<T> {
    /// Allocates moments for exactly the trainable parameters of `store`.
    pub fn new(store: &ParamStore<T>, config: AdamWConfig) -> Self {
        let ids = store.trainable_ids();
        let first = ids
            .iter()
            .map(|&id| Tensor::zeros(store.value(id).shape().to_vec()))
            .collect();
        let second = ids
            .iter()
            .map(|&id| Tensor::zeros(store.value(id).shape().to_vec()))
            .collect();
        Self {
            config,
            step_count: 0,
            ids,
            first,
            second,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn param_ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn first_moment(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.ids.iter().position(|&i| i == id).map(|k| &self.first[k])
    }

    pub fn second_moment(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.ids.iter().position(|&i| i == id).map(|k| &self.second[k])
    }

    /// One update. `lr_scale` multiplies each group's base rate (the schedule
    /// factor); a missing gradient is treated as zero.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>, lr_scale: f64) -> Result<()> {
        if lr_scale < 0.0 || !lr_scale.is_finite() {
            return Err(Error::invalid(format!("learning-rate scale {lr_scale}")));
        }
        for &id in &self.ids {
            let p = store.get(id);
            if let Some(g) = grads.get(id) {
                if g.shape() != p.value.shape() {
                    return Err(Error::shape(
                        "adamw_step",
                        format!("{}: grad {:?} vs param {:?}", p.name, g.shape(), p.value.shape()),
                    ));
                }
            }
        }
        self.step_count += 1;
        let c = &self.config;
        let t = self.step_count as i32;
        let bc1 = T::lit(1.0 - c.beta1.powi(t));
        let bc2 = T::lit(1.0 - c.beta2.powi(t));
        let (b1, b2, eps) = (T::lit(c.beta1), T::lit(c.beta2), T::lit(c.eps));
        for (k, &id) in self.ids.iter().enumerate() {
            let param = store.get_mut(id);
            let lr = T::lit(c.base_lr(param.group) * lr_scale);
            let decay = T::one() - lr * T::lit(c.weight_decay);
            let g = grads.get(id);
            let m = self.first[k].data_mut();
            let v = self.second[k].data_mut();
            let p = param.value.data_mut();
            for j in 0..p.len() {
                let gj = g.map_or(T::zero(), |g| g.data()[j]);
                m[j] = b1 * m[j] + (T::one() - b1) * gj;
                v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] = p[j] * decay - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
