//! Seeded synthetic tasks with explicit latent attribute structure.

mod corpus;
mod spec;
mod task;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use corpus::{AlignmentCorpus, CorpusConfig, FILLER_WORDS};
pub use spec::{LatentAttribute, TaskSpec};
pub use task::{attribute_probe_accuracy, generate_task, make_base_novel_task, ClassInfo, LabeledSample, Split, Task};

use crate::error::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    format_version: u32,
    seed: u64,
    spec: TaskSpec,
    task: Task,
}

/// Writes `task` as JSON with a header echoing its spec and seed.
pub fn save_task(task: &Task, path: &Path) -> Result<()> {
    let file = DatasetFile {
        format_version: DATASET_FORMAT_VERSION,
        seed: task.spec.seed,
        spec: task.spec.clone(),
        task: task.clone(),
    };
    let text = serde_json::to_string(&file).map_err(|e| Error::format(path, e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a dataset file. When `expected` is given the header spec must
/// match it exactly.
pub fn load_task(path: &Path, expected: Option<&TaskSpec>) -> Result<Task> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: DatasetFile = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    if file.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::format(
            path,
            format!("unsupported dataset format version {}", file.format_version),
        ));
    }
    if file.spec != file.task.spec || file.seed != file.spec.seed {
        return Err(Error::format(path, "header does not match the stored task"));
    }
    if let Some(spec) = expected {
        if &file.spec != spec {
            return Err(Error::Configuration(format!(
                "dataset {} was generated from a different spec",
                path.display()
            )));
        }
    }
    Ok(file.task)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::task::sq_dist;
    use super::*;
    use crate::vocab::Vocabulary;

    fn small_spec() -> TaskSpec {
        TaskSpec {
            num_classes: 8,
            samples_per_class: 10,
            val_samples_per_class: 2,
            test_samples_per_class: 10,
            noise_std: 0.05,
            ..TaskSpec::default()
        }
    }

    #[test]
    fn zero_noise_samples_equal_prototypes() {
        let task = generate_task(&TaskSpec {
            noise_std: 0.0,
            ..small_spec()
        })
        .unwrap();
        for s in task.train.iter().chain(&task.test) {
            assert_eq!(s.x, task.prototype(s.class));
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = generate_task(&small_spec()).unwrap();
        let b = generate_task(&small_spec()).unwrap();
        assert_eq!(a, b);
        let c = generate_task(&TaskSpec {
            seed: 1,
            ..small_spec()
        })
        .unwrap();
        assert_eq!(a.classes, c.classes);
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn nearest_prototype_is_perfect_at_low_noise() {
        let task = generate_task(&small_spec()).unwrap();
        let protos: Vec<Vec<f64>> = (0..task.num_classes()).map(|c| task.prototype(c)).collect();
        for s in &task.test {
            let best = (0..protos.len())
                .min_by(|&a, &b| sq_dist(&protos[a], &s.x).total_cmp(&sq_dist(&protos[b], &s.x)))
                .unwrap();
            assert_eq!(best, s.class);
        }
    }

    #[test]
    fn signatures_are_unique_and_non_informative_values_shared() {
        let task = generate_task(&TaskSpec {
            num_classes: 16,
            ..small_spec()
        })
        .unwrap();
        let mut sigs: Vec<Vec<usize>> = (0..16).map(|c| task.signature(c).unwrap()).collect();
        sigs.sort();
        sigs.dedup();
        assert_eq!(sigs.len(), 16);
        let inf = task.spec.informative_indices().unwrap();
        for k in 0..task.spec.latent_attributes.len() {
            if !inf.contains(&k) {
                assert!(task.classes.iter().all(|c| c.values[k] == task.classes[0].values[k]));
            }
        }
    }

    #[test]
    fn too_many_classes_is_a_spec_error() {
        let spec = TaskSpec {
            num_classes: 17,
            ..small_spec()
        };
        assert!(matches!(generate_task(&spec), Err(Error::Spec(_))));
        let spec = TaskSpec {
            informative_attributes: vec!["weight".into()],
            ..small_spec()
        };
        assert!(matches!(generate_task(&spec), Err(Error::Spec(_))));
    }

    #[test]
    fn splits_are_sized_and_disjoint() {
        let task = generate_task(&small_spec()).unwrap();
        assert_eq!(task.train.len(), 80);
        assert_eq!(task.val.len(), 16);
        assert_eq!(task.test.len(), 80);
        let train: Vec<&Vec<f64>> = task.train.iter().map(|s| &s.x).collect();
        assert!(task.test.iter().all(|s| !train.contains(&&s.x)));
    }

    #[test]
    fn vocabulary_covers_all_names() {
        let task = generate_task(&small_spec()).unwrap();
        let vocab = Vocabulary::new(task.vocabulary_words());
        for w in task.class_names().iter().chain(&task.spec.attribute_names()) {
            vocab.tokenize(w).unwrap();
        }
    }

    #[test]
    fn base_and_novel_share_structure_but_not_classes() {
        let (base, novel) = make_base_novel_task(&TaskSpec {
            num_classes: 16,
            ..small_spec()
        })
        .unwrap();
        assert_eq!(base.num_classes(), 8);
        assert_eq!(novel.num_classes(), 8);
        let bn = base.class_names();
        assert!(novel.class_names().iter().all(|n| !bn.contains(n)));
        let bsig: Vec<_> = (0..8).map(|c| base.signature(c).unwrap()).collect();
        assert!((0..8).all(|c| !bsig.contains(&novel.signature(c).unwrap())));
        assert_eq!(base.attribute_vectors, novel.attribute_vectors);
        assert!(novel.test.iter().all(|s| s.class < 8));
        assert!(matches!(
            make_base_novel_task(&TaskSpec {
                num_classes: 3,
                ..small_spec()
            }),
            Err(Error::Spec(_))
        ));
    }

    #[test]
    fn attribute_knowledge_transfers_but_name_memorization_does_not() {
        let spec = TaskSpec {
            num_classes: 16,
            attribute_signal: 0.8,
            noise_std: 0.1,
            ..small_spec()
        };
        let (base, novel) = make_base_novel_task(&spec).unwrap();
        let inf = spec.informative_indices().unwrap();
        let chance = 1.0 / novel.num_classes() as f64;

        // A memorizer can only ever answer with base labels, none of which
        // name a novel class: it scores zero, below chance.
        let base_protos: Vec<Vec<f64>> = (0..base.num_classes()).map(|c| base.prototype(c)).collect();
        let novel_names = novel.class_names();
        let memorized = novel
            .test
            .iter()
            .filter(|s| {
                let best = (0..base_protos.len())
                    .min_by(|&a, &b| sq_dist(&base_protos[a], &s.x).total_cmp(&sq_dist(&base_protos[b], &s.x)))
                    .unwrap();
                base.classes[best].name == novel_names[s.class]
            })
            .count() as f64
            / novel.test.len() as f64;
        assert!(memorized <= chance);

        // Attribute-aware scoring: estimate each attribute value's mean
        // from base data and score novel classes by their signature.
        let dim = spec.raw_feature_dim;
        let score = |x: &[f64], c: usize| -> f64 {
            inf.iter()
                .map(|&k| {
                    let v = novel.classes[c].values[k];
                    let members: Vec<&LabeledSample> = base
                        .train
                        .iter()
                        .filter(|s| base.classes[s.class].values[k] == v)
                        .collect();
                    if members.is_empty() {
                        return 0.0;
                    }
                    let mut mean = vec![0.0; dim];
                    for m in &members {
                        for (a, b) in mean.iter_mut().zip(&m.x) {
                            *a += b / members.len() as f64;
                        }
                    }
                    -sq_dist(&mean, x)
                })
                .sum()
        };
        let aware = novel
            .test
            .iter()
            .filter(|s| {
                let best = (0..novel.num_classes())
                    .max_by(|&a, &b| score(&s.x, a).total_cmp(&score(&s.x, b)))
                    .unwrap();
                best == s.class
            })
            .count() as f64
            / novel.test.len() as f64;
        assert!(aware > chance + 0.2, "aware {aware}");
    }

    #[test]
    fn probe_recovers_informative_attributes() {
        for noise in [0.05, 0.1] {
            let task = generate_task(&TaskSpec {
                num_classes: 16,
                noise_std: noise,
                ..small_spec()
            })
            .unwrap();
            for k in task.spec.informative_indices().unwrap() {
                let acc = attribute_probe_accuracy(&task, k).unwrap();
                assert!(acc >= 0.95, "noise {noise} attribute {k}: {acc}");
            }
        }
    }

    #[test]
    fn dataset_file_round_trip_and_header_check() {
        let task = generate_task(&small_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("task.json");
        save_task(&task, &path).unwrap();
        assert_eq!(load_task(&path, Some(&small_spec())).unwrap(), task);
        let other = TaskSpec {
            seed: 9,
            ..small_spec()
        };
        assert!(matches!(load_task(&path, Some(&other)), Err(Error::Configuration(_))));
    }

    #[test]
    fn corpus_batches_are_distinct_and_tokenize() {
        let task = generate_task(&small_spec()).unwrap();
        let corpus = AlignmentCorpus::from_task(&task, &CorpusConfig::default()).unwrap();
        assert_eq!(corpus.num_classes(), 8 + 16);
        let vocab = Vocabulary::new(corpus.words());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batch = corpus.sample(&vocab, 32, &mut rng).unwrap();
        assert_eq!(batch.captions.len(), 32);
        assert_eq!(batch.images.rows_cols(), (32, 32));
        let mut caps = batch.captions.clone();
        caps.sort();
        caps.dedup();
        assert!(caps.len() >= 31);
        for c in &batch.captions {
            assert_eq!(c[0], vocab.start_id());
            assert_eq!(*c.last().unwrap(), vocab.end_id());
        }
    }
}
