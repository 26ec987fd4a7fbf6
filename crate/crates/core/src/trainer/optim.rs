use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learning rate every schedule decays to.
pub const FINAL_LR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr_g_init: f64,
    pub lr_d_init: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    #[serde(default = "default_epsilon")]
    pub adam_epsilon: f64,
    pub final_lr: f64,
    pub segment_length_samples: usize,
}

fn default_epsilon() -> f64 {
    1e-8
}

pub const DEFAULT_TOTAL_STEPS: usize = 400;
pub const DEFAULT_SEGMENT: usize = 4096;

impl OptimizerConfig {
    /// Supervised defaults.
    pub fn cgan() -> Self {
        Self {
            lr_g_init: 4e-4,
            lr_d_init: 2e-4,
            batch_size: 16,
            total_steps: DEFAULT_TOTAL_STEPS,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_epsilon: default_epsilon(),
            final_lr: FINAL_LR,
            segment_length_samples: DEFAULT_SEGMENT,
        }
    }

    /// Unsupervised defaults: half the supervised learning rates and batch.
    pub fn cyclegan() -> Self {
        let c = Self::cgan();
        Self {
            lr_g_init: c.lr_g_init / 2.0,
            lr_d_init: c.lr_d_init / 2.0,
            batch_size: c.batch_size / 2,
            ..c
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive("lr_g_init", self.lr_g_init)?;
        positive("lr_d_init", self.lr_d_init)?;
        positive("final_lr", self.final_lr)?;
        positive("adam_epsilon", self.adam_epsilon)?;
        if self.final_lr > self.lr_g_init || self.final_lr > self.lr_d_init {
            return Err(Error::Config("final_lr exceeds an initial learning rate".into()));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.batch_size < 1 || self.total_steps < 1 || self.segment_length_samples < 1 {
            return Err(Error::Config("batch_size, total_steps and segment length must be >= 1".into()));
        }
        Ok(())
    }

    pub fn lr_g(&self, step: usize) -> Result<f64> {
        lr_schedule_to(self.lr_g_init, self.final_lr, step, self.total_steps)
    }

    pub fn lr_d(&self, step: usize) -> Result<f64> {
        lr_schedule_to(self.lr_d_init, self.final_lr, step, self.total_steps)
    }
}

/// Linear decay from `init` at step 0 to [`FINAL_LR`] at `total_steps`.
pub fn lr_schedule(init: f64, step: usize, total_steps: usize) -> Result<f64> {
    lr_schedule_to(init, FINAL_LR, step, total_steps)
}

pub fn lr_schedule_to(init: f64, last: f64, step: usize, total_steps: usize) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(Error::invalid(format!("step {step} outside [0, {total_steps}]")));
    }
    if step == total_steps {
        return Ok(last);
    }
    Ok(init + (last - init) * step as f64 / total_steps as f64)
}

/// Adam moment accumulators of one parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamMoments {
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamMoments {
    pub fn new(n: usize) -> Self {
        Self {
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// One bias-corrected Adam step on `params`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cfg: &OptimizerConfig) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != params.len() {
            return Err(Error::LengthMismatch(format!(
                "adam state has {} entries, parameters {}, gradient {}",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let mhat = *m / c1;
            let vhat = *v / c2;
            *p -= lr * mhat / (vhat.sqrt() + cfg.adam_epsilon);
        }
        Ok(())
    }
}
