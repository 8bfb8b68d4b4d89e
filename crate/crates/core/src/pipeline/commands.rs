use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{Experiment, Method, PromptCheckpoint, RunConfig, RunSeeds, World};
use crate::prompt::{AttributePosition, ClassPosition, DropPolicy, InitScheme, PromptLayout};
use crate::search::SearchResult;
use crate::seeds::sha256_hex;
use crate::synth::{generate_task, load_task, save_task, TaskSpec};
use crate::train::EvalReport;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const ABLATION_FORMAT_VERSION: u32 = 1;

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        ensure_dir(dir)?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write_text(path, &text)
}

fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

fn open_world(config: &RunConfig) -> Result<World> {
    config.validate()?;
    World::load_or_build(&config.world, &config.cache_dir())
}

/// Description of a generated dataset file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub dataset: String,
    pub sha256: String,
    pub seed: u64,
    pub data_seed: u64,
    pub num_classes: usize,
    pub base_classes: Vec<String>,
    pub novel_classes: Vec<String>,
    /// Sample count per split.
    pub splits: BTreeMap<String, usize>,
}

/// Writes `<out>/data/dataset.json` for the run seed and a manifest
/// beside it.
pub fn gen_data(config: &RunConfig) -> Result<Manifest> {
    config.world.task.validate()?;
    let spec = TaskSpec {
        seed: RunSeeds::new(config.seed).data,
        ..config.world.task.clone()
    };
    let task = generate_task(&spec)?;
    let dir = config.out_dir.join("data");
    ensure_dir(&dir)?;
    let path = dir.join("dataset.json");
    save_task(&task, &path)?;
    let stored = load_task(&path, Some(&spec))?;
    let (base, novel) = stored.split_base_novel()?;
    let manifest = Manifest {
        format_version: MANIFEST_FORMAT_VERSION,
        dataset: "dataset.json".into(),
        sha256: file_sha256(&path)?,
        seed: config.seed,
        data_seed: spec.seed,
        num_classes: stored.num_classes(),
        base_classes: base.class_names(),
        novel_classes: novel.class_names(),
        splits: [
            ("train".to_string(), stored.train.len()),
            ("val".to_string(), stored.val.len()),
            ("test".to_string(), stored.test.len()),
        ]
        .into(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Searches the attribute pool for the run seed and writes
/// `<out>/search/seed<seed>.txt`.
pub fn search_attrs(config: &RunConfig) -> Result<SearchResult> {
    if !config.attributes.search {
        return Err(Error::Configuration(
            "attributes.search is disabled in this config".into(),
        ));
    }
    let world = open_world(config)?;
    Experiment::new(config, &world)?.search(config.seed)
}

fn method_dir(config: &RunConfig, method: Method) -> PathBuf {
    config.out_dir.join(method.as_str())
}

fn comparison_table(classic: &EvalReport, atprompt: &EvalReport) -> String {
    let mut out = String::new();
    writeln!(out, "format_version: {REPORT_TEXT_FORMAT_VERSION}").unwrap();
    writeln!(out, "{:<10} {:>8} {:>8} {:>8}", "method", "base", "novel", "hm").unwrap();
    for r in [classic, atprompt] {
        writeln!(
            out,
            "{:<10} {:>8.2} {:>8.2} {:>8.2}",
            r.method, r.base_accuracy, r.novel_accuracy, r.harmonic_mean
        )
        .unwrap();
    }
    writeln!(
        out,
        "{:<10} {:>+8.2} {:>+8.2} {:>+8.2}",
        "delta",
        atprompt.base_accuracy - classic.base_accuracy,
        atprompt.novel_accuracy - classic.novel_accuracy,
        atprompt.harmonic_mean - classic.harmonic_mean
    )
    .unwrap();
    writeln!(out, "seeds: {:?}", atprompt.seeds).unwrap();
    out
}

const REPORT_TEXT_FORMAT_VERSION: u32 = 1;

fn write_comparison(config: &RunConfig) -> Result<Option<PathBuf>> {
    let classic = method_dir(config, Method::Classic).join("report.json");
    let atprompt = method_dir(config, Method::Atprompt).join("report.json");
    if !classic.exists() || !atprompt.exists() {
        return Ok(None);
    }
    let table = comparison_table(&EvalReport::load(&classic)?, &EvalReport::load(&atprompt)?);
    let path = config.out_dir.join("comparison.txt");
    write_text(&path, &table)?;
    Ok(Some(path))
}

/// Trains and evaluates `methods` for every configured seed. Writes
/// `<out>/<method>/seed<s>/{checkpoint,report}.json`, the seed mean as
/// `<out>/<method>/report.json`, and `<out>/comparison.txt` once both
/// methods have a report.
pub fn train(config: &RunConfig, methods: &[Method]) -> Result<BTreeMap<Method, EvalReport>> {
    let world = open_world(config)?;
    let exp = Experiment::new(config, &world)?;
    let mut out = BTreeMap::new();
    for &method in methods {
        let dir = method_dir(config, method);
        let mut reports = Vec::with_capacity(config.seeds.len());
        for &seed in &config.seeds {
            let run = exp.run(method, seed)?;
            log::info!(
                "{method} seed {seed}: base {:.2} novel {:.2} hm {:.2}",
                run.report.base_accuracy,
                run.report.novel_accuracy,
                run.report.harmonic_mean
            );
            let seed_dir = dir.join(format!("seed{seed}"));
            ensure_dir(&seed_dir)?;
            run.checkpoint.save(&seed_dir.join("checkpoint.json"))?;
            PromptCheckpoint::load(&seed_dir.join("checkpoint.json"))?;
            run.report.save(&seed_dir.join("report.json"))?;
            reports.push(EvalReport::load(&seed_dir.join("report.json"))?);
        }
        let mean = EvalReport::aggregate(&reports)?;
        mean.save(&dir.join("report.json"))?;
        out.insert(method, EvalReport::load(&dir.join("report.json"))?);
    }
    write_comparison(config)?;
    Ok(out)
}

/// Re-scores the stored checkpoints of every trained method and writes
/// `<out>/<method>/eval.json`.
pub fn eval(config: &RunConfig) -> Result<BTreeMap<Method, EvalReport>> {
    let world = open_world(config)?;
    let exp = Experiment::new(config, &world)?;
    let mut out = BTreeMap::new();
    for method in [Method::Classic, Method::Atprompt] {
        let dir = method_dir(config, method);
        let paths: Vec<PathBuf> = config
            .seeds
            .iter()
            .map(|s| dir.join(format!("seed{s}")).join("checkpoint.json"))
            .collect();
        if !paths.iter().any(|p| p.exists()) {
            continue;
        }
        let mut reports = Vec::with_capacity(paths.len());
        for path in &paths {
            let ckpt = PromptCheckpoint::load(path)?;
            reports.push(exp.evaluate_checkpoint(&ckpt)?);
        }
        let mean = EvalReport::aggregate(&reports)?;
        mean.save(&dir.join("eval.json"))?;
        out.insert(method, EvalReport::load(&dir.join("eval.json"))?);
    }
    if out.is_empty() {
        return Err(Error::Data(format!(
            "no checkpoints under {} for seeds {:?}; run train first",
            config.out_dir.display(),
            config.seeds
        )));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Length,
    ClassPosition,
    DropPolicy,
    AttrOrder,
    AttrPosition,
    Init,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 6] = [
        AblationAxis::Length,
        AblationAxis::ClassPosition,
        AblationAxis::DropPolicy,
        AblationAxis::AttrOrder,
        AblationAxis::AttrPosition,
        AblationAxis::Init,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationAxis::Length => "length",
            AblationAxis::ClassPosition => "class_position",
            AblationAxis::DropPolicy => "drop_policy",
            AblationAxis::AttrOrder => "attr_order",
            AblationAxis::AttrPosition => "attr_position",
            AblationAxis::Init => "init",
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|a| a.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|a| a.as_str()).collect();
            Error::Usage(format!(
                "unknown ablation axis `{s}`; expected one of: {}",
                names.join(", ")
            ))
        })
    }
}

pub const LENGTH_CELLS: [usize; 4] = [1, 2, 4, 8];
const MAX_ORDER_ATTRIBUTES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub cell: String,
    pub report: EvalReport,
}

/// One sweep, cells sorted by harmonic mean, best first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub format_version: u32,
    pub axis: AblationAxis,
    pub cells: Vec<AblationCell>,
}

impl AblationReport {
    pub fn cell(&self, name: &str) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.cell == name)
    }

    pub fn to_text(&self) -> String {
        let width = self.cells.iter().map(|c| c.cell.len()).max().unwrap_or(4).max(4);
        let mut out = String::new();
        writeln!(out, "format_version: {}", self.format_version).unwrap();
        writeln!(out, "axis: {}", self.axis).unwrap();
        writeln!(out, "{:<width$} {:>8} {:>8} {:>8}", "cell", "base", "novel", "hm").unwrap();
        for c in &self.cells {
            let r = &c.report;
            writeln!(
                out,
                "{:<width$} {:>8.2} {:>8.2} {:>8.2}",
                c.cell, r.base_accuracy, r.novel_accuracy, r.harmonic_mean
            )
            .unwrap();
        }
        if let [best, .., worst] = self.cells.as_slice() {
            writeln!(
                out,
                "hm spread: {:.2}",
                best.report.harmonic_mean - worst.report.harmonic_mean
            )
            .unwrap();
        }
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if report.format_version != ABLATION_FORMAT_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported ablation format version {}", report.format_version),
            ));
        }
        for c in &report.cells {
            c.report.validate().map_err(|e| Error::format(path, e.to_string()))?;
        }
        Ok(report)
    }
}

fn permutations(items: &[String]) -> Vec<Vec<String>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head.clone());
            out.push(tail);
        }
    }
    out
}

/// Named cells of `axis`: each a config variant and the layout to train.
fn ablation_cells(
    config: &RunConfig,
    axis: AblationAxis,
    attributes: &[String],
) -> Result<Vec<(String, RunConfig, PromptLayout)>> {
    let base_layout = config.layout.layout(attributes);
    let same = |name: String, layout: PromptLayout| (name, config.clone(), layout);
    let cells = match axis {
        AblationAxis::Length => LENGTH_CELLS
            .iter()
            .map(|&len| {
                let mut cfg = config.clone();
                cfg.train.class_len = len;
                cfg.train.attribute_len = len;
                (format!("length_{len}"), cfg, base_layout.clone())
            })
            .collect(),
        AblationAxis::ClassPosition => ClassPosition::ALL
            .iter()
            .map(|&p| {
                same(
                    p.to_string(),
                    PromptLayout {
                        class_token_position: p,
                        ..base_layout.clone()
                    },
                )
            })
            .collect(),
        AblationAxis::AttrPosition => AttributePosition::ALL
            .iter()
            .map(|&p| {
                same(
                    p.to_string(),
                    PromptLayout {
                        attribute_position_style: p,
                        ..base_layout.clone()
                    },
                )
            })
            .collect(),
        AblationAxis::DropPolicy => {
            let layers = config.world.encoder.num_layers;
            if layers < 2 {
                return Err(Error::Configuration(
                    "the drop_policy axis needs an encoder with at least 2 layers".into(),
                ));
            }
            let depth = if base_layout.is_deep() {
                base_layout.depth
            } else {
                layers.min(3)
            };
            DropPolicy::ALL
                .iter()
                .map(|&p| {
                    same(
                        p.to_string(),
                        PromptLayout {
                            drop_policy: p,
                            depth,
                            ..base_layout.clone()
                        },
                    )
                })
                .collect()
        }
        AblationAxis::AttrOrder => {
            if attributes.len() > MAX_ORDER_ATTRIBUTES {
                return Err(Error::Configuration(format!(
                    "the attr_order axis supports at most {MAX_ORDER_ATTRIBUTES} attributes, got {}",
                    attributes.len()
                )));
            }
            permutations(attributes)
                .into_iter()
                .map(|order| {
                    same(
                        order.join("+"),
                        PromptLayout {
                            attribute_names: order,
                            ..base_layout.clone()
                        },
                    )
                })
                .collect()
        }
        AblationAxis::Init => [InitScheme::RandomNormal, InitScheme::PhraseInit]
            .into_iter()
            .map(|init| {
                let mut cfg = config.clone();
                cfg.train.init = init;
                (init.to_string(), cfg, base_layout.clone())
            })
            .collect(),
    };
    Ok(cells)
}

/// Runs every cell of `axis` for every configured seed with the
/// attribute-anchored prompt. Each cell writes
/// `<out>/ablate/<axis>/<cell>/report.json`; the sweep is written to
/// `<out>/ablate/<axis>.{json,txt}`.
pub fn ablate(config: &RunConfig, axis: AblationAxis) -> Result<AblationReport> {
    let world = open_world(config)?;
    let attributes = Experiment::new(config, &world)?.attributes(config.seed)?;
    let root = config.out_dir.join("ablate");
    let mut cells = Vec::new();
    for (name, cell_config, layout) in ablation_cells(config, axis, &attributes)? {
        let exp = Experiment::new(&cell_config, &world)?;
        let cell_dir = root.join(axis.as_str()).join(&name);
        let mut reports = Vec::with_capacity(config.seeds.len());
        for &seed in &config.seeds {
            let run = exp.run_with(Method::Atprompt, seed, &layout)?;
            let path = cell_dir.join(format!("seed{seed}")).join("report.json");
            ensure_dir(path.parent().expect("has parent"))?;
            run.report.save(&path)?;
            reports.push(run.report);
        }
        let mean = EvalReport::aggregate(&reports)?;
        mean.save(&cell_dir.join("report.json"))?;
        log::info!("{axis} {name}: hm {:.2}", mean.harmonic_mean);
        cells.push(AblationCell {
            cell: name,
            report: mean,
        });
    }
    cells.sort_by(|a, b| {
        b.report
            .harmonic_mean
            .total_cmp(&a.report.harmonic_mean)
            .then_with(|| a.cell.cmp(&b.cell))
    });
    let sweep = AblationReport {
        format_version: ABLATION_FORMAT_VERSION,
        axis,
        cells,
    };
    let json = root.join(format!("{axis}.json"));
    write_json(&json, &sweep)?;
    write_text(&root.join(format!("{axis}.txt")), &sweep.to_text())?;
    AblationReport::load(&json)
}

/// Collects every artifact under the output directory into
/// `<out>/report.txt` and returns its text.
pub fn report(config: &RunConfig) -> Result<String> {
    let out_dir = &config.out_dir;
    let mut text = String::new();
    writeln!(text, "format_version: {REPORT_TEXT_FORMAT_VERSION}").unwrap();
    writeln!(text, "config_hash: {}", config.hash()).unwrap();
    let mut found = false;

    let manifest_path = out_dir.join("data").join("manifest.json");
    if manifest_path.exists() {
        let raw = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let m: Manifest = serde_json::from_str(&raw).map_err(|e| Error::format(&manifest_path, e.to_string()))?;
        writeln!(text, "\n[data]\nsha256: {}\nsplits: {:?}", m.sha256, m.splits).unwrap();
        found = true;
    }

    let search_dir = out_dir.join("search");
    if search_dir.is_dir() {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&search_dir)
            .map_err(|e| Error::io(&search_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "txt"))
            .collect();
        paths.sort();
        if !paths.is_empty() {
            writeln!(text, "\n[search]").unwrap();
            found = true;
        }
        for p in paths {
            let r = SearchResult::load(&p)?;
            let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or("?");
            writeln!(text, "{name}: {}", r.pool.label(r.selected)).unwrap();
        }
    }

    let mut methods = Vec::new();
    for method in [Method::Classic, Method::Atprompt] {
        let path = method_dir(config, method).join("report.json");
        if path.exists() {
            methods.push(EvalReport::load(&path)?);
        }
    }
    if !methods.is_empty() {
        found = true;
        writeln!(text, "\n[train]").unwrap();
        for r in &methods {
            writeln!(
                text,
                "{:<10} base {:>6.2} novel {:>6.2} hm {:>6.2} seeds {:?}",
                r.method, r.base_accuracy, r.novel_accuracy, r.harmonic_mean, r.seeds
            )
            .unwrap();
        }
    }

    for axis in AblationAxis::ALL {
        let path = out_dir.join("ablate").join(format!("{axis}.json"));
        if path.exists() {
            found = true;
            let sweep = AblationReport::load(&path)?;
            writeln!(text, "\n[ablate {axis}]").unwrap();
            for c in &sweep.cells {
                writeln!(text, "{:<24} hm {:>6.2}", c.cell, c.report.harmonic_mean).unwrap();
            }
        }
    }

    if !found {
        return Err(Error::Data(format!("no artifacts found under {}", out_dir.display())));
    }
    write_text(&out_dir.join("report.txt"), &text)?;
    Ok(text)
}
