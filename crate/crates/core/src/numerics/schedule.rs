use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear warmup from zero followed by cosine decay to a floor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub total_steps: u64,
    pub warmup_fraction: f64,
    pub min_lr_fraction: f64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, total_steps: u64, warmup_fraction: f64, min_lr_fraction: f64) -> Result<Self> {
        let mut errs = Vec::new();
        if !(base_lr > 0.0 && base_lr.is_finite()) {
            errs.push(format!("base_lr must be positive, got {base_lr}"));
        }
        if total_steps == 0 {
            errs.push("total_steps must be positive".to_string());
        }
        if !(warmup_fraction > 0.0 && warmup_fraction < 1.0) {
            errs.push(format!("warmup_fraction must lie in (0,1), got {warmup_fraction}"));
        }
        if !(min_lr_fraction > 0.0 && min_lr_fraction <= 1.0) {
            errs.push(format!("min_lr_fraction must lie in (0,1], got {min_lr_fraction}"));
        }
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        Ok(Self {
            base_lr,
            total_steps,
            warmup_fraction,
            min_lr_fraction,
        })
    }

    /// End of the warmup window, in (fractional) steps.
    pub fn warmup_end(&self) -> f64 {
        self.warmup_fraction * self.total_steps as f64
    }

    pub fn lr_at(&self, step: u64) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::invalid(format!(
                "step {step} outside schedule of {} steps",
                self.total_steps
            )));
        }
        Ok(self.eval(step as f64))
    }

    /// The schedule as a continuous function of the step.
    pub fn eval(&self, s: f64) -> f64 {
        let w = self.warmup_end();
        if s <= w {
            return self.base_lr * s / w;
        }
        let total = self.total_steps as f64;
        let min = self.min_lr_fraction * self.base_lr;
        let progress = ((s - w) / (total - w)).min(1.0);
        min + (self.base_lr - min) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }

    /// `lr_at(step) / base_lr`, the multiplier shared by every parameter group.
    pub fn factor(&self, step: u64) -> Result<f64> {
        Ok(self.lr_at(step)? / self.base_lr)
    }
}
