use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::Task;
use crate::train::{evaluate, harmonic_mean, Evaluation, PromptModel};

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Base-to-novel result of one run, or the mean of several.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub method: String,
    pub attributes: Vec<String>,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub seeds_aggregated: usize,
    pub base_accuracy: f64,
    pub novel_accuracy: f64,
    pub harmonic_mean: f64,
    /// Per-class accuracy over base and novel classes, keyed by name.
    pub per_class_accuracy: BTreeMap<String, f64>,
}

impl EvalReport {
    pub fn from_evaluations(
        method: &str,
        attributes: &[String],
        config_hash: &str,
        seed: u64,
        base: &Evaluation,
        novel: &Evaluation,
    ) -> Result<Self> {
        let mut per_class = base.per_class.clone();
        for (name, acc) in &novel.per_class {
            if per_class.insert(name.clone(), *acc).is_some() {
                return Err(Error::Data(format!("class `{name}` is both base and novel")));
            }
        }
        Ok(Self {
            format_version: REPORT_FORMAT_VERSION,
            method: method.to_string(),
            attributes: attributes.to_vec(),
            config_hash: config_hash.to_string(),
            seeds: vec![seed],
            seeds_aggregated: 1,
            base_accuracy: base.accuracy,
            novel_accuracy: novel.accuracy,
            harmonic_mean: harmonic_mean(base.accuracy, novel.accuracy)?,
            per_class_accuracy: per_class,
        })
    }

    /// Mean accuracies over `runs`; the harmonic mean is recomputed from
    /// the mean base and novel accuracies.
    pub fn aggregate(runs: &[EvalReport]) -> Result<Self> {
        let first = runs
            .first()
            .ok_or_else(|| Error::Data("no reports to aggregate".into()))?;
        if let Some(r) = runs
            .iter()
            .find(|r| r.method != first.method || r.config_hash != first.config_hash)
        {
            return Err(Error::Contract(format!(
                "cannot aggregate `{}` ({}) with `{}` ({})",
                first.method, first.config_hash, r.method, r.config_hash
            )));
        }
        let n = runs.iter().map(|r| r.seeds_aggregated).sum::<usize>();
        let weighted = |f: &dyn Fn(&EvalReport) -> f64| {
            runs.iter().map(|r| f(r) * r.seeds_aggregated as f64).sum::<f64>() / n as f64
        };
        let base = weighted(&|r| r.base_accuracy);
        let novel = weighted(&|r| r.novel_accuracy);
        let mut per_class = BTreeMap::new();
        for name in first.per_class_accuracy.keys() {
            let acc = runs
                .iter()
                .map(|r| {
                    r.per_class_accuracy
                        .get(name)
                        .map(|a| a * r.seeds_aggregated as f64)
                        .ok_or_else(|| Error::Contract(format!("class `{name}` missing from a run")))
                })
                .sum::<Result<f64>>()?;
            per_class.insert(name.clone(), acc / n as f64);
        }
        Ok(Self {
            format_version: REPORT_FORMAT_VERSION,
            method: first.method.clone(),
            attributes: first.attributes.clone(),
            config_hash: first.config_hash.clone(),
            seeds: runs.iter().flat_map(|r| r.seeds.iter().copied()).collect(),
            seeds_aggregated: n,
            base_accuracy: base,
            novel_accuracy: novel,
            harmonic_mean: harmonic_mean(base, novel)?,
            per_class_accuracy: per_class,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("base", self.base_accuracy), ("novel", self.novel_accuracy)] {
            if !(0.0..=100.0).contains(&v) {
                return Err(Error::Validation(format!("{name} accuracy {v} outside [0, 100]")));
            }
        }
        let hm = harmonic_mean(self.base_accuracy, self.novel_accuracy)?;
        if (hm - self.harmonic_mean).abs() > 0.01 {
            return Err(Error::Validation(format!(
                "harmonic mean {} inconsistent with ({}, {})",
                self.harmonic_mean, self.base_accuracy, self.novel_accuracy
            )));
        }
        if self.seeds_aggregated != self.seeds.len() {
            return Err(Error::Validation(
                "seeds_aggregated disagrees with the seed list".into(),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if report.format_version != REPORT_FORMAT_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported report format version {}", report.format_version),
            ));
        }
        report.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(report)
    }
}

/// Accuracy of fixed prompts on a source task and on each target task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossDatasetReport {
    pub format_version: u32,
    pub source: (String, f64),
    pub targets: Vec<(String, f64)>,
    /// Mean over the target columns.
    pub average: f64,
}

/// Scores trained prompts on `source` and every target's test split using
/// each target's own class names.
pub fn cross_dataset_eval(
    model: PromptModel<'_>,
    source: (&str, &Task),
    targets: &[(&str, &Task)],
) -> Result<CrossDatasetReport> {
    if targets.is_empty() {
        return Err(Error::Data("cross-dataset evaluation needs at least one target".into()));
    }
    let run = |task: &Task| evaluate(model, &task.class_names(), &task.test).map(|e| e.accuracy);
    let source_acc = run(source.1)?;
    let targets = targets
        .iter()
        .map(|(name, task)| Ok((name.to_string(), run(task)?)))
        .collect::<Result<Vec<_>>>()?;
    let average = targets.iter().map(|t| t.1).sum::<f64>() / targets.len() as f64;
    Ok(CrossDatasetReport {
        format_version: REPORT_FORMAT_VERSION,
        source: (source.0.to_string(), source_acc),
        targets,
        average,
    })
}
