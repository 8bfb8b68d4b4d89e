use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Cosine,
    Constant,
}

/// `lr_init · 0.5 · (1 + cos(π · step / total_steps))`.
pub fn cosine_lr(step: usize, total_steps: usize, lr_init: f64) -> Result<f64> {
    if step > total_steps {
        return Err(Error::Contract(format!(
            "cosine_lr: step {step} exceeds total_steps {total_steps}"
        )));
    }
    if total_steps == 0 {
        return Ok(lr_init);
    }
    let t = step as f64 / total_steps as f64;
    Ok(lr_init * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
}

impl Schedule {
    pub fn lr(self, step: usize, total_steps: usize, lr_init: f64) -> Result<f64> {
        match self {
            Schedule::Cosine => cosine_lr(step, total_steps, lr_init),
            Schedule::Constant if step > total_steps => Err(Error::Contract(format!(
                "step {step} exceeds total_steps {total_steps}"
            ))),
            Schedule::Constant => Ok(lr_init),
        }
    }
}

/// `2ab / (a + b)`, defined as 0 when either accuracy is 0.
pub fn harmonic_mean(base: f64, novel: f64) -> Result<f64> {
    if base < 0.0 || novel < 0.0 || base.is_nan() || novel.is_nan() {
        return Err(Error::Contract(format!(
            "harmonic_mean: accuracies must be non-negative, got ({base}, {novel})"
        )));
    }
    if base == 0.0 || novel == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * base * novel / (base + novel))
}
