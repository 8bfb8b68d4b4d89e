//! Differentiable attribute search over the pool of base-attribute
//! combinations.

mod alternate;
mod mixture;
mod pool;
mod result;

pub use alternate::{alternating_search, search_task, split_half, Search, SearchConfig, SearchTrace};
pub use mixture::{candidate_logits, mixture_forward, AlphaVector, CandidateBanks};
pub use pool::{enumerate_pool, AttributePool, MAX_BASES};
pub use result::{caltech101_fixture, SearchResult, SEARCH_FORMAT_VERSION};

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::encoders::{DualEncoder, EncoderConfig};
    use crate::error::Error;
    use crate::prompt::TextContext;
    use crate::synth::{generate_task, TaskSpec};
    use crate::tensor_core::{Graph, Tensor};
    use crate::vocab::Vocabulary;

    #[test]
    fn pool_sizes_and_order() {
        assert_eq!(enumerate_pool(&["a", "b", "c", "d", "e"]).unwrap().len(), 31);
        assert_eq!(enumerate_pool(&["a"]).unwrap().len(), 1);
        let p = enumerate_pool(&["x", "y", "z"]).unwrap();
        let labels: Vec<String> = (0..p.len()).map(|i| p.label(i)).collect();
        assert_eq!(labels, ["(x)", "(y)", "(z)", "(x, y)", "(x, z)", "(y, z)", "(x, y, z)"]);
    }

    #[test]
    fn pool_errors() {
        let none: [&str; 0] = [];
        assert!(matches!(enumerate_pool(&none), Err(Error::Configuration(_))));
        let many: Vec<String> = (0..13).map(|i| format!("b{i}")).collect();
        assert!(matches!(enumerate_pool(&many), Err(Error::Configuration(_))));
        assert!(matches!(enumerate_pool(&["a", "b", "a"]), Err(Error::Validation(_))));
        assert!(matches!(enumerate_pool(&["a, b"]), Err(Error::Validation(_))));
    }

    proptest! {
        #[test]
        fn pool_size_law(n in 1usize..=10) {
            let bases: Vec<String> = (0..n).map(|i| format!("b{i}")).collect();
            let pool = enumerate_pool(&bases).unwrap();
            prop_assert_eq!(pool.len(), (1 << n) - 1);
            let mut seen = std::collections::HashSet::new();
            for i in 0..pool.len() {
                let idx = pool.indices(i);
                prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(seen.insert(idx.to_vec()));
                if i > 0 {
                    let prev = pool.indices(i - 1);
                    prop_assert!(prev.len() < idx.len() || (prev.len() == idx.len() && prev < idx));
                }
            }
        }
    }

    fn fixture() -> (DualEncoder, Vocabulary, Vec<String>) {
        let names: Vec<String> = ["cat", "dog", "owl"].iter().map(|s| s.to_string()).collect();
        let mut words = vec!["a", "photo", "of", "color", "shape", "size"];
        words.extend(names.iter().map(String::as_str));
        let vocab = Vocabulary::new(words);
        let cfg = EncoderConfig {
            vocab_size: vocab.len(),
            embed_dim: 8,
            num_layers: 2,
            num_heads: 2,
            max_seq_len: 24,
            joint_dim: 4,
            raw_feature_dim: 6,
            image_hidden_dim: 5,
            ..EncoderConfig::default()
        };
        (
            DualEncoder::new(cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap(),
            vocab,
            names,
        )
    }

    struct Eval {
        mixture: Tensor,
        singles: Vec<Tensor>,
    }

    fn run(alpha: &[f64], pool: &AttributePool, banks: &CandidateBanks) -> Eval {
        let (enc, vocab, names) = fixture();
        let images = Tensor::randn(&[5, 6], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(9));
        let mut g = Graph::new();
        let vars = enc.bind(&mut g, false);
        let (views, _) = banks.bind(&mut g, false);
        let ctx = TextContext {
            encoder: &enc,
            vars: &vars,
            vocab: &vocab,
        };
        let x = g.constant(images);
        let u = enc.encode_image(&mut g, &vars, x).unwrap();
        let a = g.constant(Tensor::new(&[alpha.len()], alpha.to_vec()).unwrap());
        let m = mixture_forward(&mut g, ctx, pool, a, &views, &names, u).unwrap();
        let singles = (0..pool.len())
            .map(|i| {
                let l = candidate_logits(&mut g, ctx, pool, &views, i, &names, u).unwrap();
                g.value(l).clone()
            })
            .collect();
        Eval {
            mixture: g.value(m).clone(),
            singles,
        }
    }

    fn banks_for(pool: &AttributePool) -> CandidateBanks {
        let (enc, vocab, _) = fixture();
        CandidateBanks::init(pool, &enc, &vocab, 2, 2, Default::default(), 3).unwrap()
    }

    #[test]
    fn one_hot_alpha_collapses_to_single_candidate() {
        let pool = enumerate_pool(&["color", "shape"]).unwrap();
        let banks = banks_for(&pool);
        for j in 0..pool.len() {
            for margin in [40.0, 1e6] {
                let mut alpha = vec![0.0; pool.len()];
                alpha[j] = margin;
                let e = run(&alpha, &pool, &banks);
                assert!(e.mixture.max_abs_diff(&e.singles[j]) < 1e-9);
            }
        }
    }

    #[test]
    fn mixture_matches_loop_oracle() {
        let pool = enumerate_pool(&["color", "shape", "size"]).unwrap();
        let banks = banks_for(&pool);
        let alpha = [0.3, -1.2, 0.7, 0.0, 2.1, -0.4, 0.9];
        let e = run(&alpha, &pool, &banks);
        let z: f64 = alpha.iter().map(|a| a.exp()).sum();
        let mut oracle = vec![0.0; e.mixture.numel()];
        for (i, s) in e.singles.iter().enumerate() {
            let p = alpha[i].exp() / z;
            for (o, v) in oracle.iter_mut().zip(s.data()) {
                *o += p * v;
            }
        }
        let oracle = Tensor::new(e.mixture.shape(), oracle).unwrap();
        assert!(e.mixture.max_abs_diff(&oracle) < 1e-9);
    }

    #[test]
    fn identical_candidates_give_identical_mixture() {
        let pool = enumerate_pool(&["color", "shape"]).unwrap();
        let mut banks = banks_for(&pool);
        let first = banks.attribute_blocks[0].clone();
        banks.attribute_blocks[1] = first;
        // Candidates 0 and 1 now differ only in the attribute word.
        let e = run(&[0.0, 0.0, 0.0], &pool, &banks);
        assert!(e.singles[0].max_abs_diff(&e.singles[1]) > 0.0);

        let pool = enumerate_pool(&["color"]).unwrap();
        let banks = banks_for(&pool);
        let e = run(&[5.0], &pool, &banks);
        assert!(e.mixture.max_abs_diff(&e.singles[0]) < 1e-12);
    }

    #[test]
    fn mismatched_banks_are_a_contract_error() {
        let (enc, vocab, names) = fixture();
        let pool = enumerate_pool(&["color", "shape"]).unwrap();
        let small = enumerate_pool(&["color"]).unwrap();
        let banks = banks_for(&small);
        let mut g = Graph::new();
        let vars = enc.bind(&mut g, false);
        let (views, _) = banks.bind(&mut g, false);
        let ctx = TextContext {
            encoder: &enc,
            vars: &vars,
            vocab: &vocab,
        };
        let u = g.constant(Tensor::zeros(&[2, 4]));
        let a = g.constant(Tensor::zeros(&[3]));
        let r = mixture_forward(&mut g, ctx, &pool, a, &views, &names, u);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    fn toy_task() -> crate::synth::Task {
        generate_task(&TaskSpec {
            num_classes: 3,
            raw_feature_dim: 6,
            samples_per_class: 4,
            val_samples_per_class: 0,
            test_samples_per_class: 1,
            ..TaskSpec::default()
        })
        .unwrap()
    }

    fn toy_vocab_encoder(task: &crate::synth::Task) -> (DualEncoder, Vocabulary) {
        let mut words = vec!["a".to_string(), "photo".into(), "of".into()];
        words.extend(task.vocabulary_words());
        let vocab = Vocabulary::new(words);
        let cfg = EncoderConfig {
            vocab_size: vocab.len(),
            embed_dim: 8,
            num_layers: 2,
            num_heads: 2,
            max_seq_len: 24,
            joint_dim: 4,
            raw_feature_dim: 6,
            image_hidden_dim: 5,
            ..EncoderConfig::default()
        };
        (DualEncoder::new(cfg, &mut ChaCha8Rng::seed_from_u64(5)).unwrap(), vocab)
    }

    #[test]
    fn alternation_isolates_alpha_and_theta() {
        let task = toy_task();
        let (enc, vocab) = toy_vocab_encoder(&task);
        let pool = enumerate_pool(&["color", "shape"]).unwrap();
        let config = SearchConfig::default();
        let mut s = Search::new(pool, task.class_names(), &config, &enc, &vocab).unwrap();
        let refs: Vec<_> = task.train.iter().collect();
        let (x, y) = crate::synth::Task::batch(&refs).unwrap();
        let u = enc.image_features(&x).unwrap();
        for _ in 0..3 {
            let theta = s.banks.clone();
            let alpha = s.alpha.clone();
            s.alpha_step(&u, &y).unwrap();
            assert_eq!(s.banks, theta);
            assert_ne!(s.alpha, alpha);
            assert!((s.alpha.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let alpha = s.alpha.clone();
            s.theta_step(&u, &y, 0.1).unwrap();
            assert_eq!(s.alpha, alpha);
            assert_ne!(s.banks, theta);
        }
    }

    #[test]
    fn search_is_deterministic_and_normalized() {
        let task = toy_task();
        let (enc, vocab) = toy_vocab_encoder(&task);
        let pool = enumerate_pool(&["color", "shape"]).unwrap();
        let config = SearchConfig {
            epochs: 2,
            batch_size: 4,
            ..SearchConfig::default()
        };
        let (a, trace) = search_task(&task, &pool, &config, &enc, &vocab).unwrap();
        let (b, _) = search_task(&task, &pool, &config, &enc, &vocab).unwrap();
        assert_eq!(a, b);
        assert_eq!(trace.epoch_weights.len(), 2);
        // 6 samples per half, batch 4: two steps per epoch.
        assert_eq!(trace.alpha_losses.len(), 4);
        for w in &trace.epoch_weights {
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(a.selected, crate::tensor_core::argmax(&a.weights));
        assert!(a.weights.iter().any(|&w| (w - 1.0 / 3.0).abs() > 1e-9));
    }

    #[test]
    fn single_base_selects_the_sole_combination() {
        let task = toy_task();
        let (enc, vocab) = toy_vocab_encoder(&task);
        let pool = enumerate_pool(&["size"]).unwrap();
        let config = SearchConfig {
            epochs: 1,
            ..SearchConfig::default()
        };
        let (r, _) = search_task(&task, &pool, &config, &enc, &vocab).unwrap();
        assert_eq!(r.selected_words(), ["size"]);
        assert_eq!(r.weights, [1.0]);
    }

    #[test]
    fn empty_split_is_a_data_error() {
        let task = toy_task();
        let (enc, vocab) = toy_vocab_encoder(&task);
        let pool = enumerate_pool(&["size"]).unwrap();
        let r = alternating_search(
            &task.train,
            &[],
            &task.class_names(),
            &pool,
            &SearchConfig::default(),
            &enc,
            &vocab,
        );
        assert!(matches!(r, Err(Error::Data(_))));
    }

    #[test]
    fn split_half_is_stratified_and_disjoint() {
        let task = toy_task();
        let (a, b) = split_half(&task.train, 1);
        assert_eq!(a.len(), 6);
        assert_eq!(b.len(), 6);
        for c in 0..3 {
            assert_eq!(a.iter().filter(|s| s.class == c).count(), 2);
        }
        assert!(a.iter().all(|s| !b.contains(s)));
    }

    #[test]
    fn result_file_round_trip() {
        let pool = enumerate_pool(&["color", "shape", "size"]).unwrap();
        let weights = crate::search::mixture::softmax(&[0.1, 0.5, -0.2, 1.3, 0.0, 0.2, -1.0]);
        let r = SearchResult::new(pool, weights, "abc".into());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("search.txt");
        r.export(&path).unwrap();
        let loaded = SearchResult::load(&path).unwrap();
        assert_eq!(loaded, r.rounded());
        assert!((loaded.weights.iter().sum::<f64>() - 1.0).abs() <= 0.01);
        assert_eq!(loaded.selected_words(), ["color", "shape"]);
        assert!(matches!(
            SearchResult::load(&dir.path().join("missing.txt")),
            Err(Error::Io { .. })
        ));
        std::fs::write(&path, "format_version: 1\nbases: a\nn: 2\n").unwrap();
        assert!(matches!(SearchResult::load(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn caltech_fixture_parses() {
        let r = caltech101_fixture().unwrap();
        assert_eq!(r.weights.len(), 31);
        assert_eq!(r.selected_words(), ["shape", "size"]);
        assert_eq!(r.weights[r.selected], 0.565);
        assert_eq!(SearchResult::parse(&r.to_text()).unwrap(), r);
    }
}
