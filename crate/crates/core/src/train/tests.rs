use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::encoders::{DualEncoder, EncoderConfig};
use crate::error::Error;
use crate::prompt::PromptLayout;
use crate::synth::{generate_task, AlignmentCorpus, CorpusConfig, LatentAttribute, Task, TaskSpec};
use crate::vocab::Vocabulary;

fn setup(spec: &TaskSpec, seed: u64) -> (Task, DualEncoder, Vocabulary) {
    setup_with(spec, seed, false)
}

fn setup_with(spec: &TaskSpec, seed: u64, fan_in_init: bool) -> (Task, DualEncoder, Vocabulary) {
    let task = generate_task(spec).unwrap();
    let vocab = Vocabulary::new(
        AlignmentCorpus::from_task(&task, &CorpusConfig::default())
            .unwrap()
            .words(),
    );
    let cfg = EncoderConfig {
        vocab_size: vocab.len(),
        embed_dim: 16,
        num_layers: 2,
        num_heads: 2,
        max_seq_len: 24,
        joint_dim: 8,
        raw_feature_dim: spec.raw_feature_dim,
        image_hidden_dim: 16,
        fan_in_init,
        ..EncoderConfig::default()
    };
    let enc = DualEncoder::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (task, enc, vocab)
}

fn small_spec(num_classes: usize) -> TaskSpec {
    TaskSpec {
        num_classes,
        raw_feature_dim: 8,
        samples_per_class: 8,
        val_samples_per_class: 0,
        test_samples_per_class: 8,
        noise_std: 0.05,
        ..TaskSpec::default()
    }
}

#[test]
fn separable_two_class_task_is_fitted() {
    let spec = TaskSpec {
        latent_attributes: vec![LatentAttribute::new("color", 2)],
        informative_attributes: vec!["color".into()],
        attribute_signal: 0.5,
        ..small_spec(2)
    };
    let (task, enc, vocab) = setup_with(&spec, 1, true);
    let config = TrainConfig {
        epochs: 50,
        batch_size: 8,
        lr_init: 0.05,
        layout: PromptLayout::with_attributes(&["color"]),
        ..TrainConfig::default()
    };
    let mut bank = config.init_bank(&enc, &vocab).unwrap();
    let before = enc.clone();
    let history = train_prompts(&task, &config, &mut bank, &enc, &vocab).unwrap();
    assert_eq!(enc, before);
    assert_eq!(history.epoch_losses.len(), 50);
    assert!(history.epoch_losses.last().unwrap() < &history.epoch_losses[0]);
    let model = PromptModel {
        encoder: &enc,
        vocab: &vocab,
        layout: &config.layout,
        bank: &bank,
    };
    let acc = evaluate(model, &task.class_names(), &task.train).unwrap().accuracy;
    assert_eq!(acc, 100.0, "losses {:?}", history.epoch_losses);
}

#[test]
fn initial_loss_is_near_uniform() {
    for n in [4, 8] {
        let (task, enc, vocab) = setup(&small_spec(n), 2);
        let config = TrainConfig {
            epochs: 1,
            batch_size: 64,
            lr_init: 1e-12,
            ..TrainConfig::default()
        };
        let mut bank = config.init_bank(&enc, &vocab).unwrap();
        let h = train_prompts(&task, &config, &mut bank, &enc, &vocab).unwrap();
        let ln = (n as f64).ln();
        assert!((h.batch_losses[0] - ln).abs() < 0.5, "{} vs {ln}", h.batch_losses[0]);
    }
}

#[test]
fn training_is_deterministic() {
    let (task, enc, vocab) = setup(&small_spec(4), 3);
    let config = TrainConfig {
        epochs: 3,
        batch_size: 8,
        layout: PromptLayout::with_attributes(&["color", "shape"]),
        ..TrainConfig::default()
    };
    let run = || {
        let mut bank = config.init_bank(&enc, &vocab).unwrap();
        let h = train_prompts(&task, &config, &mut bank, &enc, &vocab).unwrap();
        (bank, h)
    };
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(a, b);
    assert_eq!(ha, hb);
    let model = PromptModel {
        encoder: &enc,
        vocab: &vocab,
        layout: &config.layout,
        bank: &a,
    };
    let e1 = evaluate(model, &task.class_names(), &task.test).unwrap();
    let e2 = evaluate(model, &task.class_names(), &task.test).unwrap();
    assert_eq!(e1, e2);
}

#[test]
fn invalid_configs_and_empty_splits() {
    let (task, enc, vocab) = setup(&small_spec(4), 3);
    let bad = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let mut bank = TrainConfig::default().init_bank(&enc, &vocab).unwrap();
    assert!(matches!(
        train_prompts(&task, &bad, &mut bank, &enc, &vocab),
        Err(Error::Configuration(_))
    ));
    let bad = TrainConfig {
        lr_init: 0.0,
        ..TrainConfig::default()
    };
    assert!(matches!(bad.validate(), Err(Error::Configuration(_))));
    let model = PromptModel {
        encoder: &enc,
        vocab: &vocab,
        layout: &TrainConfig::default().layout,
        bank: &bank,
    };
    assert!(matches!(evaluate(model, &task.class_names(), &[]), Err(Error::Data(_))));
}

#[test]
fn divergence_names_the_batch() {
    let (task, enc, vocab) = setup(&small_spec(4), 3);
    let config = TrainConfig {
        epochs: 2,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let mut bank = config.init_bank(&enc, &vocab).unwrap();
    bank.class_block.data_mut()[0] = f64::NAN;
    let r = train_prompts(&task, &config, &mut bank, &enc, &vocab);
    assert!(
        matches!(
            r,
            Err(Error::Diverged { epoch: 0, batch: 0 }) | Err(Error::NonFinite { .. })
        ),
        "{r:?}"
    );
}

#[test]
fn forced_and_random_predictions() {
    let names: Vec<String> = (0..4).map(|i| format!("c{i}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let labels: Vec<usize> = (0..10_000).map(|i| i % 4).collect();
    assert_eq!(score(&names, &labels, &labels).unwrap().accuracy, 100.0);
    let random: Vec<usize> = labels.iter().map(|_| rng.random_range(0..4)).collect();
    let acc = score(&names, &labels, &random).unwrap().accuracy;
    assert!((acc - 25.0).abs() < 2.0, "{acc}");
    assert!(matches!(score(&names, &[], &[]), Err(Error::Data(_))));
}

fn eval(acc: f64, names: &[&str]) -> Evaluation {
    Evaluation {
        accuracy: acc,
        per_class: names.iter().map(|n| (n.to_string(), acc)).collect(),
    }
}

#[test]
fn reports_aggregate_by_mean() {
    let runs: Vec<EvalReport> = [(80.0, 60.0), (82.0, 66.0), (84.0, 63.0)]
        .iter()
        .enumerate()
        .map(|(i, &(b, n))| {
            EvalReport::from_evaluations("atprompt", &[], "h", i as u64 + 1, &eval(b, &["b"]), &eval(n, &["n"]))
                .unwrap()
        })
        .collect();
    for r in &runs {
        r.validate().unwrap();
    }
    let agg = EvalReport::aggregate(&runs).unwrap();
    assert_eq!(agg.seeds, [1, 2, 3]);
    assert_eq!(agg.seeds_aggregated, 3);
    assert!((agg.base_accuracy - 82.0).abs() < 1e-12);
    assert!((agg.novel_accuracy - 63.0).abs() < 1e-12);
    assert!((agg.per_class_accuracy["n"] - 63.0).abs() < 1e-12);
    agg.validate().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    agg.save(&path).unwrap();
    assert_eq!(EvalReport::load(&path).unwrap(), agg);
    let mut other = runs[0].clone();
    other.method = "classic".into();
    assert!(matches!(
        EvalReport::aggregate(&[runs[0].clone(), other]),
        Err(Error::Contract(_))
    ));
}

#[test]
fn cross_dataset_self_transfer_and_average() {
    let (task, enc, vocab) = setup(&small_spec(8), 4);
    let (base, novel) = task.split_base_novel().unwrap();
    let config = TrainConfig::default();
    let bank = config.init_bank(&enc, &vocab).unwrap();
    let model = PromptModel {
        encoder: &enc,
        vocab: &vocab,
        layout: &config.layout,
        bank: &bank,
    };
    let r = cross_dataset_eval(model, ("base", &base), &[("base", &base), ("novel", &novel)]).unwrap();
    let direct = evaluate(model, &base.class_names(), &base.test).unwrap().accuracy;
    assert_eq!(r.source.1, direct);
    assert_eq!(r.targets[0].1, direct);
    assert!((r.average - (r.targets[0].1 + r.targets[1].1) / 2.0).abs() < 1e-9);

    let mut foreign = novel.clone();
    foreign.classes[0].name = "zebra".into();
    let err = cross_dataset_eval(model, ("base", &base), &[("foreign", &foreign)]).unwrap_err();
    assert!(matches!(err, Error::Tokenization { ref words } if words == &["zebra".to_string()]));
}
