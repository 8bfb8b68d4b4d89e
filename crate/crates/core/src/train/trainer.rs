use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::encoders::DualEncoder;
use crate::error::{Error, Result};
use crate::prompt::{
    class_features, init_soft_tokens, phrase_rows, InitScheme, PromptLayout, SoftPromptBank, TextContext, INIT_PHRASE,
};
use crate::seeds::{rng_for, sub_seed};
use crate::synth::{LabeledSample, Task};
use crate::tensor_core::{argmax, Graph, Sgd, Tensor};
use crate::train::Schedule;
use crate::vocab::Vocabulary;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub schedule: Schedule,
    pub seed: u64,
    /// Attribute words, positions, drop policy and depth.
    pub layout: PromptLayout,
    /// Class soft-block length `M`.
    pub class_len: usize,
    /// Attribute soft-block length `a_m`.
    pub attribute_len: usize,
    pub init: InitScheme,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            lr_init: 0.002,
            schedule: Schedule::Cosine,
            seed: 0,
            layout: PromptLayout::default(),
            class_len: 2,
            attribute_len: 2,
            init: InitScheme::RandomNormal,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Configuration("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Configuration("batch_size must be at least 1".into()));
        }
        if !(self.lr_init > 0.0) || !self.lr_init.is_finite() {
            return Err(Error::Configuration(format!(
                "lr_init must be positive, got {}",
                self.lr_init
            )));
        }
        Ok(())
    }

    /// A freshly initialized bank shaped for this configuration.
    pub fn init_bank(&self, encoder: &DualEncoder, vocab: &Vocabulary) -> Result<SoftPromptBank> {
        self.init_bank_with_seed(encoder, vocab, sub_seed(self.seed, "prompt-init"))
    }

    /// As [`TrainConfig::init_bank`] with an explicit initialization seed.
    pub fn init_bank_with_seed(&self, encoder: &DualEncoder, vocab: &Vocabulary, seed: u64) -> Result<SoftPromptBank> {
        let mut bank = SoftPromptBank::for_layout(
            &self.layout,
            encoder.config.embed_dim,
            self.class_len,
            self.attribute_len,
        );
        let rows = match self.init {
            InitScheme::PhraseInit => phrase_rows(encoder, vocab, INIT_PHRASE)?,
            InitScheme::RandomNormal => Vec::new(),
        };
        init_soft_tokens(&mut bank, self.init, seed, &rows)?;
        Ok(bank)
    }
}

/// Everything needed to score images against class prompts.
#[derive(Clone, Copy)]
pub struct PromptModel<'a> {
    pub encoder: &'a DualEncoder,
    pub vocab: &'a Vocabulary,
    pub layout: &'a PromptLayout,
    pub bank: &'a SoftPromptBank,
}

impl PromptModel<'_> {
    /// `[N × joint_dim]` text features for `class_names`.
    pub fn class_features(&self, class_names: &[String]) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.encoder.bind(&mut g, false);
        let bank = self.bank.bind(&mut g, false);
        let ctx = TextContext {
            encoder: self.encoder,
            vars: &vars,
            vocab: self.vocab,
        };
        let w = class_features(&mut g, ctx, &bank, self.layout, class_names)?;
        Ok(g.value(w).clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Top-1 accuracy in percent.
    pub accuracy: f64,
    /// Per-class accuracy in percent, keyed by class name.
    pub per_class: BTreeMap<String, f64>,
}

/// Highest-similarity class per image row; ties go to the lowest index.
pub fn predict(encoder: &DualEncoder, class_features: &Tensor, images: &Tensor) -> Result<Vec<usize>> {
    let u = encoder.image_features(images)?;
    let (n, j) = u.rows_cols();
    let (c, jw) = class_features.rows_cols();
    if j != jw {
        return Err(Error::Dimension(format!(
            "image features width {j} vs class features width {jw}"
        )));
    }
    let w = class_features.data();
    Ok((0..n)
        .map(|i| {
            let row = u.row(i);
            let sims: Vec<f64> = (0..c)
                .map(|k| row.iter().zip(&w[k * j..(k + 1) * j]).map(|(a, b)| a * b).sum())
                .collect();
            argmax(&sims)
        })
        .collect())
}

/// Scores predictions against labels.
pub fn score(class_names: &[String], labels: &[usize], predictions: &[usize]) -> Result<Evaluation> {
    if labels.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    if labels.len() != predictions.len() {
        return Err(Error::Contract("labels and predictions differ in length".into()));
    }
    let mut hits = vec![(0usize, 0usize); class_names.len()];
    for (&l, &p) in labels.iter().zip(predictions) {
        let slot = hits
            .get_mut(l)
            .ok_or_else(|| Error::Index(format!("label {l} out of range for {} classes", class_names.len())))?;
        slot.1 += 1;
        if l == p {
            slot.0 += 1;
        }
    }
    let correct: usize = hits.iter().map(|h| h.0).sum();
    let per_class = class_names
        .iter()
        .zip(&hits)
        .filter(|(_, h)| h.1 > 0)
        .map(|(n, h)| (n.clone(), 100.0 * h.0 as f64 / h.1 as f64))
        .collect();
    Ok(Evaluation {
        accuracy: 100.0 * correct as f64 / labels.len() as f64,
        per_class,
    })
}

/// Top-1 accuracy of `model` on `samples`, whose labels index `class_names`.
/// Class features are computed once.
pub fn evaluate(model: PromptModel<'_>, class_names: &[String], samples: &[LabeledSample]) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let features = model.class_features(class_names)?;
    let refs: Vec<&LabeledSample> = samples.iter().collect();
    let (images, labels) = Task::batch(&refs)?;
    let predictions = predict(model.encoder, &features, &images)?;
    score(class_names, &labels, &predictions)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub batch_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
}

/// Minimizes batch-mean cross-entropy over `task`'s training split by
/// updating only the soft tokens in `bank`.
pub fn train_prompts(
    task: &Task,
    config: &TrainConfig,
    bank: &mut SoftPromptBank,
    encoder: &DualEncoder,
    vocab: &Vocabulary,
) -> Result<TrainHistory> {
    config.validate()?;
    config.layout.validate(encoder.config.num_layers)?;
    bank.check_layout(&config.layout)?;
    if task.train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let class_names = task.class_names();
    let refs: Vec<&LabeledSample> = task.train.iter().collect();
    let (images, labels) = Task::batch(&refs)?;
    let image_features = encoder.image_features(&images)?;

    let n = labels.len();
    let batches_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = config.epochs * batches_per_epoch;
    let mut rng = rng_for(config.seed, "train-batches");
    let sgd = Sgd::new(config.lr_init);
    let mut history = TrainHistory::default();
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut g = Graph::new();
            let vars = encoder.bind(&mut g, false);
            let bank_vars = bank.bind(&mut g, true);
            let ctx = TextContext {
                encoder,
                vars: &vars,
                vocab,
            };
            let w = class_features(&mut g, ctx, &bank_vars, &config.layout, &class_names)?;
            let rows: Vec<Vec<f64>> = chunk.iter().map(|&i| image_features.row(i).to_vec()).collect();
            let u = g.constant(Tensor::from_rows(&rows)?);
            let logits = encoder.logits(&mut g, u, w)?;
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let loss = match g.cross_entropy(logits, &batch_labels) {
                Ok(l) => l,
                Err(Error::NonFinite { .. }) => return Err(Error::Diverged { epoch, batch: b }),
                Err(e) => return Err(e),
            };
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, batch: b });
            }
            let mut grads = match g.backward(loss) {
                Ok(gr) => gr,
                Err(Error::NonFinite { .. }) => return Err(Error::Diverged { epoch, batch: b }),
                Err(e) => return Err(e),
            };
            let grads: Vec<Tensor> = bank_vars.all().iter().map(|&v| grads.take(v)).collect();
            let lr = config.schedule.lr(step, total_steps, config.lr_init)?;
            sgd.step_with_lr(&mut bank.params_mut(), &grads, lr)?;
            if bank.params().iter().any(|t| !t.is_finite()) {
                return Err(Error::Diverged { epoch, batch: b });
            }
            history.batch_losses.push(value);
            epoch_loss += value * chunk.len() as f64;
            step += 1;
        }
        history.epoch_losses.push(epoch_loss / n as f64);
    }
    Ok(history)
}
