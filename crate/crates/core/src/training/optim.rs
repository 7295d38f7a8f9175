use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_proportion: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            warmup_proportion: 0.1,
        }
    }
}

impl AdamWConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0
            && (0.0..=1.0).contains(&self.warmup_proportion);
        if ok {
            Ok(())
        } else {
            Err(config_err!("invalid optimizer settings {self:?}"))
        }
    }
}

/// AdamW moments plus a linear warmup / linear decay schedule over a fixed
/// number of steps.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub total_steps: u64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig, n_params: usize, total_steps: u64) -> Result<Self> {
        config.validate()?;
        if total_steps == 0 {
            return Err(config_err!("optimizer needs at least one step"));
        }
        Ok(Self {
            config,
            total_steps,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        })
    }

    /// Multiplier on the base rate for 0-based step `t`.
    pub fn schedule(&self, t: u64) -> f64 {
        let total = self.total_steps as f64;
        let warmup = (self.config.warmup_proportion * total).ceil();
        let t = t as f64;
        if t < warmup {
            (t + 1.0) / warmup
        } else {
            ((total - t) / (total - warmup).max(1.0)).max(0.0)
        }
    }

    pub fn current_lr(&self) -> f64 {
        self.config.lr * self.schedule(self.step)
    }

    pub fn apply(&mut self, phase: &str, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::training(
                phase,
                self.step as usize,
                format!(
                    "shape mismatch: {} params, {} grads, {} moments",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::training(
                phase,
                self.step as usize,
                format!("non-finite gradient at parameter {i}"),
            ));
        }
        let c = &self.config;
        let lr = self.current_lr();
        let k = (self.step + 1) as i32;
        let bc1 = 1.0 - c.beta1.powi(k);
        let bc2 = 1.0 - c.beta2.powi(k);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *p -= lr * c.weight_decay * *p;
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
        }
        self.step += 1;
        Ok(())
    }
}
