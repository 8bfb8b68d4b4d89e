use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds::rng_for;
use crate::synth::TaskSpec;
use crate::tensor_core::Tensor;
use crate::train::base_novel_split;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub class: usize,
}

/// One class of the universe: its name, a value index for every latent
/// attribute, and its idiosyncratic offset vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassInfo {
    pub name: String,
    pub values: Vec<usize>,
    pub offset: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub spec: TaskSpec,
    /// `attribute_vectors[k][v]` is the raw-space embedding of value `v`
    /// of latent attribute `k`.
    pub attribute_vectors: Vec<Vec<Vec<f64>>>,
    pub classes: Vec<ClassInfo>,
    pub train: Vec<LabeledSample>,
    pub val: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

pub(crate) fn random_unit(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    let scale = 1.0 / (dim as f64).sqrt();
    (0..dim)
        .map(|_| StandardNormal.sample(rng))
        .map(|z: f64| z * scale)
        .collect()
}

/// `s · Σ_{k ∈ active} A_k[v_k] + (1 − s) · offset`.
pub(crate) fn compose_prototype(
    attribute_vectors: &[Vec<Vec<f64>>],
    values: &[usize],
    active: impl Iterator<Item = usize>,
    offset: &[f64],
    signal: f64,
) -> Vec<f64> {
    let mut p: Vec<f64> = offset.iter().map(|o| (1.0 - signal) * o).collect();
    for k in active {
        for (pi, a) in p.iter_mut().zip(&attribute_vectors[k][values[k]]) {
            *pi += signal * a;
        }
    }
    p
}

fn class_name(i: usize, n: usize) -> String {
    let width = n.saturating_sub(1).to_string().len().max(2);
    format!("cls{i:0width$}")
}

fn signatures(spec: &TaskSpec, informative: &[usize], rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let radices: Vec<usize> = informative
        .iter()
        .map(|&k| spec.latent_attributes[k].num_values)
        .collect();
    let decode = |mut code: usize| {
        radices
            .iter()
            .map(|&r| {
                let d = code % r;
                code /= r;
                d
            })
            .collect::<Vec<_>>()
    };
    let cap: usize = radices.iter().product();
    if cap <= 1 << 16 {
        let mut codes: Vec<usize> = (0..cap).collect();
        codes.shuffle(rng);
        codes.truncate(spec.num_classes);
        codes.into_iter().map(decode).collect()
    } else {
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(spec.num_classes);
        while out.len() < spec.num_classes {
            let sig: Vec<usize> = radices.iter().map(|&r| rng.random_range(0..r)).collect();
            if seen.insert(sig.clone()) {
                out.push(sig);
            }
        }
        out
    }
}

/// Draws the class universe and all three splits for `spec`.
pub fn generate_task(spec: &TaskSpec) -> Result<Task> {
    spec.validate()?;
    let informative = spec.informative_indices()?;
    let dim = spec.raw_feature_dim;
    let mut world = rng_for(spec.world_seed, "synth-structure");
    let attribute_vectors: Vec<Vec<Vec<f64>>> = spec
        .latent_attributes
        .iter()
        .map(|a| (0..a.num_values).map(|_| random_unit(dim, &mut world)).collect())
        .collect();
    let common: Vec<usize> = spec
        .latent_attributes
        .iter()
        .map(|a| world.random_range(0..a.num_values))
        .collect();
    let sigs = signatures(spec, &informative, &mut world);
    let classes: Vec<ClassInfo> = sigs
        .into_iter()
        .enumerate()
        .map(|(i, sig)| {
            let mut values = common.clone();
            for (&k, v) in informative.iter().zip(sig) {
                values[k] = v;
            }
            ClassInfo {
                name: class_name(i, spec.num_classes),
                values,
                offset: random_unit(dim, &mut world),
            }
        })
        .collect();

    let mut task = Task {
        spec: spec.clone(),
        attribute_vectors,
        classes,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    let mut rng = rng_for(spec.seed, "synth-samples");
    let prototypes: Vec<Vec<f64>> = (0..task.classes.len()).map(|c| task.prototype(c)).collect();
    let mut draw = |count: usize| {
        let mut out = Vec::with_capacity(count * prototypes.len());
        for (c, proto) in prototypes.iter().enumerate() {
            for _ in 0..count {
                let x = proto
                    .iter()
                    .map(|p| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        p + spec.noise_std * z
                    })
                    .collect();
                out.push(LabeledSample { x, class: c });
            }
        }
        out
    };
    task.train = draw(spec.samples_per_class);
    task.val = draw(spec.val_samples_per_class);
    task.test = draw(spec.test_samples_per_class);
    Ok(task)
}

/// Generates the universe for `spec`, then splits it into a base task and
/// a novel task with the base/novel rule on class names. Both keep the
/// full attribute structure; labels are re-indexed within each task.
pub fn make_base_novel_task(spec: &TaskSpec) -> Result<(Task, Task)> {
    if spec.num_classes < 4 {
        return Err(Error::Spec(format!(
            "a base/novel task needs at least 4 classes, got {}",
            spec.num_classes
        )));
    }
    let full = generate_task(spec)?;
    full.split_base_novel()
}

impl Task {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    /// Noise-free prototype of class `c`.
    pub fn prototype(&self, c: usize) -> Vec<f64> {
        let info = &self.classes[c];
        compose_prototype(
            &self.attribute_vectors,
            &info.values,
            0..self.attribute_vectors.len(),
            &info.offset,
            self.spec.attribute_signal,
        )
    }

    /// Class names and attribute words, in the order a vocabulary should
    /// receive them.
    pub fn vocabulary_words(&self) -> Vec<String> {
        let mut words = self.spec.attribute_names();
        words.extend(self.class_names());
        words
    }

    pub fn split(&self, which: Split) -> &[LabeledSample] {
        match which {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// `[n × raw]` feature matrix and labels for `samples`.
    pub fn batch(samples: &[&LabeledSample]) -> Result<(Tensor, Vec<usize>)> {
        let rows: Vec<Vec<f64>> = samples.iter().map(|s| s.x.clone()).collect();
        let labels = samples.iter().map(|s| s.class).collect();
        Ok((Tensor::from_rows(&rows)?, labels))
    }

    /// The sub-task holding the classes in `class_ids` (in that order),
    /// with labels re-indexed to `0..class_ids.len()`.
    pub fn subset(&self, class_ids: &[usize]) -> Result<Task> {
        let mut remap = vec![None; self.classes.len()];
        for (new, &old) in class_ids.iter().enumerate() {
            if old >= self.classes.len() {
                return Err(Error::Index(format!(
                    "class {old} out of range for {} classes",
                    self.classes.len()
                )));
            }
            remap[old] = Some(new);
        }
        let pick = |samples: &[LabeledSample]| {
            samples
                .iter()
                .filter_map(|s| {
                    remap[s.class].map(|c| LabeledSample {
                        x: s.x.clone(),
                        class: c,
                    })
                })
                .collect::<Vec<_>>()
        };
        Ok(Task {
            spec: TaskSpec {
                num_classes: class_ids.len(),
                ..self.spec.clone()
            },
            attribute_vectors: self.attribute_vectors.clone(),
            classes: class_ids.iter().map(|&c| self.classes[c].clone()).collect(),
            train: pick(&self.train),
            val: pick(&self.val),
            test: pick(&self.test),
        })
    }

    pub fn split_base_novel(&self) -> Result<(Task, Task)> {
        let names = self.class_names();
        let (base, novel) = base_novel_split(&names)?;
        let index = |set: &[String]| {
            set.iter()
                .map(|n| names.iter().position(|m| m == n).expect("name from this task"))
                .collect::<Vec<_>>()
        };
        Ok((self.subset(&index(&base))?, self.subset(&index(&novel))?))
    }

    /// Informative value signature of class `c`.
    pub fn signature(&self, c: usize) -> Result<Vec<usize>> {
        Ok(self
            .spec
            .informative_indices()?
            .into_iter()
            .map(|k| self.classes[c].values[k])
            .collect())
    }
}

/// Accuracy of a nearest-centroid linear probe that predicts the value of
/// latent attribute `k` from raw features, fitted on train and scored on
/// test.
pub fn attribute_probe_accuracy(task: &Task, k: usize) -> Result<f64> {
    let values = task
        .spec
        .latent_attributes
        .get(k)
        .ok_or_else(|| Error::Index(format!("attribute {k} out of range")))?
        .num_values;
    let dim = task.spec.raw_feature_dim;
    let mut sums = vec![vec![0.0; dim]; values];
    let mut counts = vec![0usize; values];
    for s in &task.train {
        let v = task.classes[s.class].values[k];
        counts[v] += 1;
        for (a, x) in sums[v].iter_mut().zip(&s.x) {
            *a += x;
        }
    }
    let centroids: Vec<Option<Vec<f64>>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &n)| (n > 0).then(|| s.into_iter().map(|x| x / n as f64).collect()))
        .collect();
    if task.test.is_empty() {
        return Err(Error::Data("probe needs test samples".into()));
    }
    let mut correct = 0;
    for s in &task.test {
        let best = centroids
            .iter()
            .enumerate()
            .filter_map(|(v, c)| c.as_ref().map(|c| (v, sq_dist(c, &s.x))))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(v, _)| v);
        if best == Some(task.classes[s.class].values[k]) {
            correct += 1;
        }
    }
    Ok(correct as f64 / task.test.len() as f64)
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
