use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use super::*;
use crate::error::Error;
use crate::seeds::sha256_hex;
use crate::synth::TaskSpec;

fn shared_cache() -> &'static Path {
    static CACHE: OnceLock<tempfile::TempDir> = OnceLock::new();
    CACHE
        .get_or_init(|| {
            let dir = tempfile::tempdir().unwrap();
            World::load_or_build(&tiny("unused".into()).world, dir.path()).unwrap();
            dir
        })
        .path()
}

fn tiny(out_dir: PathBuf) -> RunConfig {
    let mut cfg = RunConfig {
        seeds: vec![1, 2],
        out_dir,
        ..RunConfig::default()
    };
    cfg.world.task = TaskSpec {
        num_classes: 8,
        samples_per_class: 4,
        val_samples_per_class: 1,
        test_samples_per_class: 4,
        ..TaskSpec::default()
    };
    cfg.world.corpus.extra_classes = 4;
    cfg.world.encoder.embed_dim = 16;
    cfg.world.encoder.num_layers = 2;
    cfg.world.encoder.num_heads = 2;
    cfg.world.encoder.image_hidden_dim = 16;
    cfg.world.alignment.steps = 20;
    cfg.world.alignment.warmup_steps = 5;
    cfg.world.alignment.batch_size = 16;
    cfg.attributes.fixture = None;
    cfg.attributes.words = Some(vec!["color".into(), "shape".into()]);
    cfg.search.epochs = 1;
    cfg.search.batch_size = 8;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 8;
    cfg
}

fn tiny_in(dir: &Path) -> RunConfig {
    RunConfig {
        cache_dir: Some(shared_cache().to_path_buf()),
        ..tiny(dir.to_path_buf())
    }
}

fn digest(path: &Path) -> String {
    sha256_hex(&std::fs::read(path).unwrap())
}

#[test]
fn config_toml_round_trip_and_defaults() {
    let cfg = RunConfig::default();
    cfg.validate().unwrap();
    assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    let partial = RunConfig::from_toml("seeds = [4]\n[train]\nepochs = 3\n").unwrap();
    assert_eq!(partial.seeds, vec![4]);
    assert_eq!(partial.train.epochs, 3);
    assert_eq!(partial.layout.depth, 1);
    assert!(matches!(
        RunConfig::from_toml("bogus = 1"),
        Err(Error::Configuration(_))
    ));
}

#[test]
fn exactly_one_attribute_source() {
    let mut cfg = RunConfig::default();
    cfg.attributes.words = Some(vec!["color".into()]);
    assert!(matches!(cfg.validate(), Err(Error::Configuration(_))));
    cfg.attributes.fixture = None;
    cfg.validate().unwrap();
    cfg.attributes.words = None;
    assert!(matches!(cfg.validate(), Err(Error::Configuration(_))));
}

#[test]
fn missing_dataset_file_is_rejected() {
    let cfg = RunConfig {
        dataset: Some("/nonexistent/dataset.json".into()),
        ..RunConfig::default()
    };
    assert!(matches!(cfg.validate(), Err(Error::Configuration(_))));
}

#[test]
fn config_hash_ignores_seeds_and_locations() {
    let a = RunConfig::default();
    let b = RunConfig {
        seed: 9,
        seeds: vec![7],
        out_dir: "elsewhere".into(),
        ..RunConfig::default()
    };
    assert_eq!(a.hash(), b.hash());
    let mut c = RunConfig::default();
    c.train.epochs += 1;
    assert_ne!(a.hash(), c.hash());
    assert_eq!(a.world.encoder_key(), c.world.encoder_key());
}

#[test]
fn sub_seeds_are_distinct() {
    let s = RunSeeds::new(1);
    let all = [s.data, s.init, s.search, s.train];
    for i in 0..4 {
        for j in i + 1..4 {
            assert_ne!(all[i], all[j]);
        }
    }
    assert_ne!(RunSeeds::new(2), s);
}

#[test]
fn gen_data_is_idempotent_and_lists_splits() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path().join("nested/out"));
    let m = gen_data(&cfg).unwrap();
    assert_eq!(m.splits["train"], 32);
    assert_eq!(m.splits["val"], 8);
    assert_eq!(m.splits["test"], 32);
    assert_eq!(m.base_classes.len() + m.novel_classes.len(), 8);
    let data = cfg.out_dir.join("data/dataset.json");
    let first = (digest(&data), digest(&cfg.out_dir.join("data/manifest.json")));
    assert_eq!(first.0, m.sha256);
    gen_data(&cfg).unwrap();
    assert_eq!(first, (digest(&data), digest(&cfg.out_dir.join("data/manifest.json"))));
}

#[test]
fn gen_data_into_unwritable_location_fails() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let cfg = tiny(blocker.join("out"));
    assert!(matches!(gen_data(&cfg), Err(Error::Io { .. })));
}

#[test]
fn world_cache_is_reused() {
    let cfg = tiny_in(Path::new("unused"));
    let path = World::cache_path(&cfg.world, shared_cache());
    assert!(path.exists());
    let before = digest(&path);
    let a = World::load_or_build(&cfg.world, shared_cache()).unwrap();
    assert_eq!(digest(&path), before);
    let b = World::build(&cfg.world).unwrap();
    assert_eq!(a.encoder, b.encoder);
    assert_eq!(a.vocab, b.vocab);
}

#[test]
fn train_writes_reproducible_artifacts_and_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_in(dir.path());
    let reports = train(&cfg, &[Method::Classic, Method::Atprompt]).unwrap();
    let files = [
        "classic/seed1/checkpoint.json",
        "classic/seed2/report.json",
        "classic/report.json",
        "atprompt/seed1/checkpoint.json",
        "atprompt/report.json",
        "search/seed1.txt",
        "search/seed2.txt",
        "comparison.txt",
    ];
    let hashes: Vec<String> = files.iter().map(|f| digest(&cfg.out_dir.join(f))).collect();

    let at = &reports[&Method::Atprompt];
    assert_eq!(at.seeds, vec![1, 2]);
    let s1 = crate::train::EvalReport::load(&cfg.out_dir.join("atprompt/seed1/report.json")).unwrap();
    let s2 = crate::train::EvalReport::load(&cfg.out_dir.join("atprompt/seed2/report.json")).unwrap();
    assert!((at.base_accuracy - (s1.base_accuracy + s2.base_accuracy) / 2.0).abs() < 1e-9);
    assert!((at.novel_accuracy - (s1.novel_accuracy + s2.novel_accuracy) / 2.0).abs() < 1e-9);
    assert!(reports[&Method::Classic].attributes.is_empty());
    assert!(!at.attributes.is_empty());

    let other = tempfile::tempdir().unwrap();
    let cfg2 = tiny_in(other.path());
    train(&cfg2, &[Method::Classic, Method::Atprompt]).unwrap();
    let again: Vec<String> = files.iter().map(|f| digest(&cfg2.out_dir.join(f))).collect();
    assert_eq!(hashes, again);

    let evals = eval(&cfg).unwrap();
    for (m, r) in &evals {
        assert_eq!(r.base_accuracy, reports[m].base_accuracy);
        assert_eq!(r.novel_accuracy, reports[m].novel_accuracy);
    }

    let text = report(&cfg).unwrap();
    assert!(text.contains("[train]") && text.contains("[search]"));
    assert!(cfg.out_dir.join("report.txt").exists());
}

#[test]
fn eval_without_checkpoints_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(eval(&tiny_in(dir.path())), Err(Error::Data(_))));
    assert!(matches!(report(&tiny_in(dir.path())), Err(Error::Data(_))));
}

#[test]
fn checkpoint_from_another_encoder_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_in(dir.path());
    let world = World::load_or_build(&cfg.world, shared_cache()).unwrap();
    let exp = Experiment::new(&cfg, &world).unwrap();
    let mut ckpt = exp.run(Method::Classic, 1).unwrap().checkpoint;
    ckpt.encoder_key = "other".into();
    assert!(matches!(exp.evaluate_checkpoint(&ckpt), Err(Error::Configuration(_))));
}

#[test]
fn search_over_five_bases_writes_31_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_in(dir.path());
    cfg.attributes.words = None;
    cfg.attributes.fixture = Some("imagenet".into());
    let result = search_attrs(&cfg).unwrap();
    assert_eq!(result.pool.len(), 31);
    let text = std::fs::read_to_string(cfg.out_dir.join("search/seed1.txt")).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains("weight:")).count(), 31);
    let before = digest(&cfg.out_dir.join("search/seed1.txt"));
    search_attrs(&cfg).unwrap();
    assert_eq!(digest(&cfg.out_dir.join("search/seed1.txt")), before);
}

#[test]
fn single_base_search_selects_it() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_in(dir.path());
    cfg.attributes.words = Some(vec!["shape".into()]);
    let result = search_attrs(&cfg).unwrap();
    assert_eq!(result.selected_words(), vec!["shape".to_string()]);
    cfg.attributes.search = false;
    assert!(matches!(search_attrs(&cfg), Err(Error::Configuration(_))));
}

#[test]
fn ablation_axes_have_the_expected_cells() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_in(dir.path());
    cfg.seeds = vec![1];
    cfg.attributes.search = false;
    let names = |r: &AblationReport| {
        let mut n: Vec<String> = r.cells.iter().map(|c| c.cell.clone()).collect();
        n.sort();
        n
    };
    let cp = ablate(&cfg, AblationAxis::ClassPosition).unwrap();
    assert_eq!(names(&cp), vec!["end", "front", "middle"]);
    assert!(cp
        .cells
        .windows(2)
        .all(|w| w[0].report.harmonic_mean >= w[1].report.harmonic_mean));
    let dp = ablate(&cfg, AblationAxis::DropPolicy).unwrap();
    assert_eq!(names(&dp), vec!["full_drop", "partial_drop", "retain_all"]);
    let ao = ablate(&cfg, AblationAxis::AttrOrder).unwrap();
    assert_eq!(names(&ao), vec!["color+shape", "shape+color"]);
    assert!(ao.to_text().contains("hm spread:"));
    assert!(cfg.out_dir.join("ablate/attr_order/shape+color/report.json").exists());
    assert_eq!(
        AblationReport::load(&cfg.out_dir.join("ablate/attr_order.json")).unwrap(),
        ao
    );
    assert!(report(&cfg).unwrap().contains("[ablate attr_order]"));
}

#[test]
fn ablation_grid_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_in(dir.path());
    cfg.seeds = vec![1];
    cfg.attributes.search = false;
    cfg.train.epochs = 1;
    assert_eq!(ablate(&cfg, AblationAxis::AttrPosition).unwrap().cells.len(), 5);
    assert_eq!(ablate(&cfg, AblationAxis::Init).unwrap().cells.len(), 2);
    let len = ablate(&cfg, AblationAxis::Length).unwrap();
    let mut cells: Vec<&str> = len.cells.iter().map(|c| c.cell.as_str()).collect();
    cells.sort();
    assert_eq!(cells, vec!["length_1", "length_2", "length_4", "length_8"]);
}

#[test]
fn unknown_axis_lists_the_axes() {
    let err = "colour".parse::<AblationAxis>().unwrap_err();
    assert_eq!(err.kind(), "usage");
    let msg = err.to_string();
    for axis in AblationAxis::ALL {
        assert!(msg.contains(axis.as_str()));
        assert_eq!(axis.as_str().parse::<AblationAxis>().unwrap(), axis);
    }
}

#[test]
fn dataset_file_replaces_generation() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_in(dir.path());
    gen_data(&cfg).unwrap();
    cfg.dataset = Some(cfg.out_dir.join("data/dataset.json"));
    let world = World::load_or_build(&cfg.world, shared_cache()).unwrap();
    let exp = Experiment::new(&cfg, &world).unwrap();
    assert_eq!(exp.task(2).unwrap(), exp.task(1).unwrap());
    cfg.world.task.num_classes = 6;
    let world6 = World::build(&cfg.world).unwrap();
    let exp = Experiment::new(&cfg, &world6).unwrap();
    assert!(matches!(exp.task(1), Err(Error::Configuration(_))));
}

#[test]
fn shipped_configs_parse() {
    let default = RunConfig::from_toml(include_str!("../../../../configs/default.toml")).unwrap();
    assert_eq!(default, RunConfig::default());
    let tiny = RunConfig::from_toml(include_str!("../../../../configs/tiny.toml")).unwrap();
    tiny.validate().unwrap();
}
