use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{CcConfig, Reduction};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: u64,
    pub lr_max: f64,
    pub lr_min: f64,
    /// Cosine cycle length in steps.
    pub period: u64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub lambda: f64,
    pub epsilon_cc: f64,
    pub cc_reduction: Reduction,
    pub cc_symmetric: bool,
    pub tau: f64,
    /// Noun phrases per text (`l`).
    pub max_nps: usize,
    pub seed: u64,
    pub freeze_image: bool,
    pub freeze_text: bool,
    pub leaf_only: bool,
    pub use_query_negative: bool,
    /// Global gradient-norm bound; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            steps: 3000,
            lr_max: 2e-5,
            lr_min: 2e-7,
            period: 1000,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            lambda: 0.08,
            epsilon_cc: 0.1,
            cc_reduction: Reduction::Sum,
            cc_symmetric: false,
            tau: 0.07,
            max_nps: 10,
            seed: 0,
            freeze_image: false,
            freeze_text: false,
            leaf_only: false,
            use_query_negative: true,
            grad_clip: Some(1.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr_min > 0.0 && self.lr_max >= self.lr_min) {
            return bad(format!(
                "need lr_max ≥ lr_min > 0, got {} and {}",
                self.lr_max, self.lr_min
            ));
        }
        if self.period == 0 {
            return bad("period must be positive".into());
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.lambda >= 0.0) || !(self.epsilon_cc >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("lambda, epsilon_cc and weight_decay must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps_adam > 0.0) {
            return bad("betas must lie in [0, 1) and eps_adam must be positive".into());
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("grad_clip must be positive".into());
        }
        Ok(())
    }

    pub fn cc(&self) -> CcConfig {
        CcConfig {
            epsilon: self.epsilon_cc,
            reduction: self.cc_reduction,
            symmetric: self.cc_symmetric,
        }
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        lr_at(step, self.period, self.lr_max, self.lr_min)
    }
}

/// Cosine schedule between `lr_max` (step 0) and `lr_min` (step `period`),
/// continuing back up so it cycles smoothly with period `2·period`:
/// `lr_min + ½(lr_max − lr_min)(1 + cos(π·step/period))`.
pub fn lr_at(step: u64, period: u64, lr_max: f64, lr_min: f64) -> f64 {
    let phase = (step % (2 * period)) as f64 / period as f64;
    let lr = lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * phase).cos());
    lr.clamp(lr_min, lr_max)
}
