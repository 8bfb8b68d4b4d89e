//! Caption/image pairs for encoder alignment.
//!
//! A caption names a class and a subset `S` of attribute words, with
//! filler words scattered between them. Its paired image shows class `c`'s
//! own value for every attribute named in the caption and a random value
//! for every other attribute:
//! `s · Σ_k A_k[v'_k] + (1 − s) · O_c + noise`, where `v'_k = v_k(c)` for
//! `k ∈ S` and is drawn uniformly otherwise. The class name on its own
//! therefore pins down only the idiosyncratic offset, and each attribute
//! word commits the caption to that attribute's value for the class.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoders::AlignmentBatch;
use crate::error::{Error, Result};
use crate::seeds::rng_for;
use crate::synth::task::{compose_prototype, random_unit};
use crate::synth::{ClassInfo, Task};
use crate::tensor_core::Tensor;
use crate::vocab::Vocabulary;

pub const FILLER_WORDS: [&str; 3] = ["a", "photo", "of"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Classes with fully random attribute values added next to the
    /// task's own classes.
    pub extra_classes: usize,
    /// Probability that each attribute word appears in a caption.
    pub attribute_rate: f64,
    /// Probability of a filler word at each gap of a caption.
    pub filler_rate: f64,
    pub noise_std: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            extra_classes: 16,
            attribute_rate: 0.5,
            filler_rate: 0.3,
            noise_std: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentCorpus {
    attribute_names: Vec<String>,
    attribute_vectors: Vec<Vec<Vec<f64>>>,
    classes: Vec<ClassInfo>,
    signal: f64,
    config: CorpusConfig,
}

impl AlignmentCorpus {
    /// Corpus over every class of `task` plus `config.extra_classes`
    /// random classes drawn from the task's world seed.
    pub fn from_task(task: &Task, config: &CorpusConfig) -> Result<Self> {
        for (name, p) in [
            ("attribute_rate", config.attribute_rate),
            ("filler_rate", config.filler_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Configuration(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if !(config.noise_std >= 0.0) {
            return Err(Error::Configuration("corpus noise_std must be >= 0".into()));
        }
        let spec = &task.spec;
        let mut rng = rng_for(spec.world_seed, "corpus-extra-classes");
        let mut classes = task.classes.clone();
        let width = config.extra_classes.saturating_sub(1).to_string().len().max(2);
        for i in 0..config.extra_classes {
            classes.push(ClassInfo {
                name: format!("obj{i:0width$}"),
                values: spec
                    .latent_attributes
                    .iter()
                    .map(|a| rng.random_range(0..a.num_values))
                    .collect(),
                offset: random_unit(spec.raw_feature_dim, &mut rng),
            });
        }
        Ok(Self {
            attribute_names: spec.attribute_names(),
            attribute_vectors: task.attribute_vectors.clone(),
            classes,
            signal: spec.attribute_signal,
            config: config.clone(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Every word a caption may use.
    pub fn words(&self) -> Vec<String> {
        let mut words: Vec<String> = FILLER_WORDS.iter().map(|s| s.to_string()).collect();
        words.extend(self.attribute_names.iter().cloned());
        words.extend(self.classes.iter().map(|c| c.name.clone()));
        words
    }

    /// About `batch_size` distinct captions with one image each; image
    /// `i` is labelled with caption `i`. A batch is the cross product of
    /// a few classes and a few attribute subsets, so every caption meets
    /// negatives that share its class or its subset.
    pub fn sample(&self, vocab: &Vocabulary, batch_size: usize, rng: &mut impl Rng) -> Result<AlignmentBatch> {
        if batch_size == 0 {
            return Err(Error::Configuration("alignment batch size must be positive".into()));
        }
        let k = self.attribute_names.len();
        let num_subsets = (batch_size as f64).sqrt().floor().max(1.0) as usize;
        let num_subsets = num_subsets.min(1usize.checked_shl(k as u32).unwrap_or(usize::MAX));
        let num_classes = batch_size.div_ceil(num_subsets).min(self.classes.len());
        let classes = rand::seq::index::sample(rng, self.classes.len(), num_classes).into_vec();
        let mut subsets: Vec<Vec<usize>> = Vec::with_capacity(num_subsets);
        let mut tries = 0;
        while subsets.len() < num_subsets && tries < 64 * num_subsets {
            tries += 1;
            let subset: Vec<usize> = (0..k).filter(|_| rng.random_bool(self.config.attribute_rate)).collect();
            if !subsets.contains(&subset) {
                subsets.push(subset);
            }
        }
        let mut captions = Vec::with_capacity(batch_size);
        let mut rows = Vec::with_capacity(batch_size);
        'outer: for &c in &classes {
            for subset in &subsets {
                if captions.len() == batch_size {
                    break 'outer;
                }
                let info = &self.classes[c];
                captions.push(self.caption(vocab, subset, &info.name, rng)?);
                let values: Vec<usize> = (0..k)
                    .map(|a| {
                        if subset.contains(&a) {
                            info.values[a]
                        } else {
                            rng.random_range(0..self.attribute_vectors[a].len())
                        }
                    })
                    .collect();
                let proto = compose_prototype(&self.attribute_vectors, &values, 0..k, &info.offset, self.signal);
                rows.push(
                    proto
                        .into_iter()
                        .map(|p| {
                            let z: f64 = StandardNormal.sample(rng);
                            p + self.config.noise_std * z
                        })
                        .collect(),
                );
            }
        }
        Ok(AlignmentBatch {
            labels: (0..captions.len()).collect(),
            images: Tensor::from_rows(&rows)?,
            captions,
        })
    }

    fn caption(&self, vocab: &Vocabulary, subset: &[usize], class: &str, rng: &mut impl Rng) -> Result<Vec<usize>> {
        let mut ids = vec![vocab.start_id()];
        let filler = |ids: &mut Vec<usize>, rng: &mut dyn rand::RngCore| -> Result<()> {
            if rng.random_bool(self.config.filler_rate) {
                let w = FILLER_WORDS[rng.random_range(0..FILLER_WORDS.len())];
                ids.extend(vocab.tokenize(w)?);
            }
            Ok(())
        };
        for &k in subset {
            filler(&mut ids, rng)?;
            ids.extend(vocab.tokenize(&self.attribute_names[k])?);
        }
        filler(&mut ids, rng)?;
        ids.extend(vocab.tokenize(class)?);
        ids.push(vocab.end_id());
        Ok(ids)
    }
}
