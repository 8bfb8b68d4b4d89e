//! Contrastive alignment of a freshly initialized dual encoder.
//!
//! A randomly initialized text tower carries no relation between words and
//! image features, so zero-shot transfer of prompts is meaningless. This
//! stage plays the role of large-scale image-text pretraining: it fits the
//! full encoder on caption/image pairs once, after which the weights are
//! frozen and shared by every experiment.

use serde::{Deserialize, Serialize};

use crate::encoders::DualEncoder;
use crate::error::{Error, Result};
use crate::tensor_core::{Adam, Graph, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignmentConfig {
    pub steps: usize,
    /// Peak Adam learning rate, reached after `warmup_steps` and then
    /// decayed to zero on a cosine.
    pub lr: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            steps: 4000,
            lr: 5e-3,
            warmup_steps: 200,
            batch_size: 32,
        }
    }
}

impl AlignmentConfig {
    /// Learning rate used at `step`: linear warmup, then cosine decay.
    pub fn lr_at(&self, step: usize) -> f64 {
        let warm = ((step + 1) as f64 / self.warmup_steps.max(1) as f64).min(1.0);
        let t = step as f64 / self.steps.max(1) as f64;
        self.lr * warm * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// One classification-style contrastive step: every caption is a candidate
/// class, and each image is labelled with the index of its caption.
#[derive(Clone, Debug)]
pub struct AlignmentBatch {
    /// Full token ids, sentinels included.
    pub captions: Vec<Vec<usize>>,
    pub images: Tensor,
    pub labels: Vec<usize>,
}

/// Runs `config.steps` Adam steps on all encoder weights. `sample` is called
/// once per step with the step index. Returns the loss history.
pub fn align_encoders(
    encoder: &mut DualEncoder,
    config: &AlignmentConfig,
    mut sample: impl FnMut(usize) -> Result<AlignmentBatch>,
) -> Result<Vec<f64>> {
    if config.steps > 0 && !(config.lr > 0.0) {
        return Err(Error::Configuration("alignment lr must be positive".into()));
    }
    let mut adam = Adam::new(config.lr);
    let mut history = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch = sample(step)?;
        let mut g = Graph::new();
        let vars = encoder.bind(&mut g, true);
        let mut rows = Vec::with_capacity(batch.captions.len());
        for caption in &batch.captions {
            let seq = encoder.embed_tokens(&mut g, &vars, caption)?;
            rows.push(encoder.encode_text(&mut g, &vars, seq, None)?);
        }
        let class_features = g.concat_rows(&rows)?;
        let images = g.constant(batch.images.clone());
        let image_features = encoder.encode_image(&mut g, &vars, images)?;
        let logits = encoder.logits(&mut g, image_features, class_features)?;
        let loss = g.cross_entropy(logits, &batch.labels)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Diverged { epoch: 0, batch: step });
        }
        history.push(value);
        let mut grads = g.backward(loss)?;
        let grads: Vec<Tensor> = vars.all().iter().map(|&v| grads.take(v)).collect();
        adam.lr = config.lr_at(step);
        adam.step(&mut encoder.params_mut(), &grads)?;
    }
    Ok(history)
}
