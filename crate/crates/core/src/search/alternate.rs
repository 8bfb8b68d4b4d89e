use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::DualEncoder;
use crate::error::{Error, Result};
use crate::prompt::{InitScheme, TextContext};
use crate::search::{mixture_forward, AlphaVector, AttributePool, CandidateBanks, SearchResult};
use crate::seeds::{rng_for, sha256_hex, sub_seed};
use crate::synth::{LabeledSample, Task};
use crate::tensor_core::{Adam, Graph, Sgd, Tensor};
use crate::train::Schedule;
use crate::vocab::Vocabulary;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial SGD rate for the soft tokens.
    pub theta_lr: f64,
    pub theta_schedule: Schedule,
    /// Adam rate for the path weights.
    pub alpha_lr: f64,
    pub class_len: usize,
    pub attribute_len: usize,
    pub init: InitScheme,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            theta_lr: 0.002,
            theta_schedule: Schedule::Cosine,
            alpha_lr: 0.02,
            class_len: 2,
            attribute_len: 2,
            init: InitScheme::RandomNormal,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::Configuration(
                "search epochs and batch_size must be at least 1".into(),
            ));
        }
        for (name, lr) in [("theta_lr", self.theta_lr), ("alpha_lr", self.alpha_lr)] {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(Error::Configuration(format!("{name} must be positive, got {lr}")));
            }
        }
        Ok(())
    }

    /// Short stable digest of the configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        sha256_hex(&json)[..16].to_string()
    }
}

/// Mutable search state: path weights, candidate soft tokens and their
/// optimizers, bound to one encoder and one set of class names.
pub struct Search<'a> {
    pub encoder: &'a DualEncoder,
    pub vocab: &'a Vocabulary,
    pub pool: AttributePool,
    pub class_names: Vec<String>,
    pub alpha: AlphaVector,
    pub banks: CandidateBanks,
    sgd: Sgd,
    adam: Adam,
}

/// Losses and weights recorded after every update.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub alpha_losses: Vec<f64>,
    pub theta_losses: Vec<f64>,
    /// `softmax(α)` at the end of each epoch.
    pub epoch_weights: Vec<Vec<f64>>,
}

impl<'a> Search<'a> {
    pub fn new(
        pool: AttributePool,
        class_names: Vec<String>,
        config: &SearchConfig,
        encoder: &'a DualEncoder,
        vocab: &'a Vocabulary,
    ) -> Result<Self> {
        config.validate()?;
        if class_names.is_empty() {
            return Err(Error::Data("search needs at least one class".into()));
        }
        let banks = CandidateBanks::init(
            &pool,
            encoder,
            vocab,
            config.class_len,
            config.attribute_len,
            config.init,
            sub_seed(config.seed, "search-init"),
        )?;
        Ok(Self {
            encoder,
            vocab,
            alpha: AlphaVector::zeros(pool.len()),
            pool,
            class_names,
            banks,
            sgd: Sgd::new(config.theta_lr),
            adam: Adam::new(config.alpha_lr),
        })
    }

    /// Mixture cross-entropy on one batch and the gradients of whichever
    /// side is trainable.
    fn loss_and_grads(&self, features: &Tensor, labels: &[usize], train_alpha: bool) -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let vars = self.encoder.bind(&mut g, false);
        let (views, theta) = self.banks.bind(&mut g, !train_alpha);
        let alpha = g.leaf(self.alpha.logits.clone(), train_alpha);
        let ctx = TextContext {
            encoder: self.encoder,
            vars: &vars,
            vocab: self.vocab,
        };
        let u = g.constant(features.clone());
        let logits = mixture_forward(&mut g, ctx, &self.pool, alpha, &views, &self.class_names, u)?;
        let loss = g.cross_entropy(logits, labels)?;
        let value = g.value(loss).item();
        let mut grads = g.backward(loss)?;
        let grads = if train_alpha {
            vec![grads.take(alpha)]
        } else {
            theta.iter().map(|&v| grads.take(v)).collect()
        };
        Ok((value, grads))
    }

    /// One Adam step on α with θ held fixed.
    pub fn alpha_step(&mut self, features: &Tensor, labels: &[usize]) -> Result<f64> {
        let (loss, grads) = self.loss_and_grads(features, labels, true)?;
        self.adam.step(&mut [&mut self.alpha.logits], &grads)?;
        Ok(loss)
    }

    /// One SGD step on θ at rate `lr` with α held fixed.
    pub fn theta_step(&mut self, features: &Tensor, labels: &[usize], lr: f64) -> Result<f64> {
        let (loss, grads) = self.loss_and_grads(features, labels, false)?;
        self.sgd.step_with_lr(&mut self.banks.params_mut(), &grads, lr)?;
        Ok(loss)
    }

    pub fn result(&self, config_hash: &str) -> SearchResult {
        SearchResult::new(self.pool.clone(), self.alpha.weights(), config_hash.to_string())
    }
}

/// Stratified split of `samples` into two halves; odd class counts give
/// the extra sample to the first half.
pub fn split_half(samples: &[LabeledSample], seed: u64) -> (Vec<LabeledSample>, Vec<LabeledSample>) {
    let mut rng = rng_for(seed, "search-split");
    let num_classes = samples.iter().map(|s| s.class + 1).max().unwrap_or(0);
    let (mut first, mut second) = (Vec::new(), Vec::new());
    for c in 0..num_classes {
        let mut members: Vec<&LabeledSample> = samples.iter().filter(|s| s.class == c).collect();
        members.shuffle(&mut rng);
        let k = members.len().div_ceil(2);
        first.extend(members[..k].iter().map(|s| (*s).clone()));
        second.extend(members[k..].iter().map(|s| (*s).clone()));
    }
    (first, second)
}

fn batches(n: usize, batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

fn gather(features: &Tensor, labels: &[usize], idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| features.row(i).to_vec()).collect();
    Ok((Tensor::from_rows(&rows)?, idx.iter().map(|&i| labels[i]).collect()))
}

/// First-order alternating search: each step is one α update on a `val`
/// batch followed by one θ update on a `train` batch. An epoch runs as
/// many steps as the longer split has batches, cycling the shorter one.
pub fn alternating_search(
    train: &[LabeledSample],
    val: &[LabeledSample],
    class_names: &[String],
    pool: &AttributePool,
    config: &SearchConfig,
    encoder: &DualEncoder,
    vocab: &Vocabulary,
) -> Result<(SearchResult, SearchTrace)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data(
            "attribute search needs non-empty train and validation splits".into(),
        ));
    }
    let mut search = Search::new(pool.clone(), class_names.to_vec(), config, encoder, vocab)?;
    let prepare = |samples: &[LabeledSample]| -> Result<(Tensor, Vec<usize>)> {
        let refs: Vec<&LabeledSample> = samples.iter().collect();
        let (x, labels) = Task::batch(&refs)?;
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::Index(format!(
                "label {bad} out of range for {} classes",
                class_names.len()
            )));
        }
        Ok((encoder.image_features(&x)?, labels))
    };
    let (train_u, train_y) = prepare(train)?;
    let (val_u, val_y) = prepare(val)?;
    let mut rng = rng_for(config.seed, "search-batches");
    let steps_per_epoch = train
        .len()
        .div_ceil(config.batch_size)
        .max(val.len().div_ceil(config.batch_size));
    let total = config.epochs * steps_per_epoch;
    let mut trace = SearchTrace::default();
    let mut step = 0;
    for epoch in 0..config.epochs {
        let train_batches = batches(train.len(), config.batch_size, &mut rng);
        let val_batches = batches(val.len(), config.batch_size, &mut rng);
        for s in 0..steps_per_epoch {
            let (vx, vy) = gather(&val_u, &val_y, &val_batches[s % val_batches.len()])?;
            let a_loss = search.alpha_step(&vx, &vy)?;
            let (tx, ty) = gather(&train_u, &train_y, &train_batches[s % train_batches.len()])?;
            let lr = config.theta_schedule.lr(step, total, config.theta_lr)?;
            let t_loss = search.theta_step(&tx, &ty, lr)?;
            if !a_loss.is_finite() || !t_loss.is_finite() || !search.alpha.logits.is_finite() {
                return Err(Error::Diverged { epoch, batch: s });
            }
            trace.alpha_losses.push(a_loss);
            trace.theta_losses.push(t_loss);
            step += 1;
        }
        trace.epoch_weights.push(search.alpha.weights());
    }
    Ok((search.result(&config.hash()), trace))
}

/// Search on a task's training split, halved into search-train and
/// search-validation parts.
pub fn search_task(
    task: &Task,
    pool: &AttributePool,
    config: &SearchConfig,
    encoder: &DualEncoder,
    vocab: &Vocabulary,
) -> Result<(SearchResult, SearchTrace)> {
    let (train, val) = split_half(&task.train, config.seed);
    alternating_search(&train, &val, &task.class_names(), pool, config, encoder, vocab)
}
