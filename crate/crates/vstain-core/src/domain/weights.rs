//! Loss-term weighting across the three training stages.

use serde::{Deserialize, Serialize};

/// Nonnegative loss weights. Defaults are the standard configuration:
/// `λ_p = 1.0`, `λ_adv = 0.3` for the tokenizer stage,
/// `λ_trans = 3.0` for the translator stage, and
/// `λ_1 = 1.0`, `λ_2 = 0.3` for the autoregressive stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_p: f64,
    pub lambda_adv: f64,
    pub lambda_trans: f64,
    pub lambda_1: f64,
    pub lambda_2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_p: 1.0,
            lambda_adv: 0.3,
            lambda_trans: 3.0,
            lambda_1: 1.0,
            lambda_2: 0.3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("lambda_p", self.lambda_p),
            ("lambda_adv", self.lambda_adv),
            ("lambda_trans", self.lambda_trans),
            ("lambda_1", self.lambda_1),
            ("lambda_2", self.lambda_2),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} must be a nonnegative finite value, got {v}"));
            }
        }
        Ok(())
    }
}
