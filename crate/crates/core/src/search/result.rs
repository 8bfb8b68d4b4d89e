use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search::{enumerate_pool, AttributePool};
use crate::tensor_core::argmax;

pub const SEARCH_FORMAT_VERSION: u32 = 1;

/// Final path weights over the pool and the selected combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub pool: AttributePool,
    pub weights: Vec<f64>,
    pub selected: usize,
    pub config_hash: String,
}

fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

impl SearchResult {
    /// Selects the highest weight, lowest index on ties.
    pub fn new(pool: AttributePool, weights: Vec<f64>, config_hash: String) -> Self {
        let selected = argmax(&weights);
        Self {
            pool,
            weights,
            selected,
            config_hash,
        }
    }

    pub fn selected_words(&self) -> Vec<String> {
        self.pool.words(self.selected)
    }

    /// Weights as stored in a result file.
    pub fn rounded(&self) -> Self {
        Self {
            weights: self.weights.iter().map(|&w| round3(w)).collect(),
            ..self.clone()
        }
    }

    /// `(label, weight)` rows in pool order.
    pub fn table(&self) -> Vec<(String, f64)> {
        (0..self.pool.len())
            .map(|i| (self.pool.label(i), self.weights[i]))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "format_version: {SEARCH_FORMAT_VERSION}\nbases: {}\nn: {}\nconfig_hash: {}\n",
            self.pool.bases().join(", "),
            self.pool.bases().len(),
            self.config_hash
        );
        for (label, w) in self.table() {
            out.push_str(&format!("{label}, weight: {:.3}\n", round3(w)));
        }
        out.push_str(&format!("selected: {}\n", self.pool.label(self.selected)));
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Parse {
            message: m,
            raw: text.chars().take(200).collect(),
        };
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let mut header = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(format!("missing `{key}` line")))?;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(':'))
                .map(|r| r.trim().to_string())
                .ok_or_else(|| bad(format!("expected `{key}:`, found {line:?}")))
        };
        let version = header("format_version")?;
        if version != SEARCH_FORMAT_VERSION.to_string() {
            return Err(bad(format!("unsupported search result format version {version}")));
        }
        let bases: Vec<String> = header("bases")?.split(',').map(|b| b.trim().to_string()).collect();
        let n: usize = header("n")?.parse().map_err(|e| bad(format!("bad `n`: {e}")))?;
        if n != bases.len() {
            return Err(bad(format!("n = {n} but {} bases listed", bases.len())));
        }
        let config_hash = header("config_hash")?;
        let pool = enumerate_pool(&bases)?;
        let mut weights = Vec::with_capacity(pool.len());
        for i in 0..pool.len() {
            let line = lines
                .next()
                .ok_or_else(|| bad(format!("expected {} weight rows, found {i}", pool.len())))?;
            let (label, w) = line
                .rsplit_once(", weight:")
                .ok_or_else(|| bad(format!("malformed weight row {line:?}")))?;
            if label.trim() != pool.label(i) {
                return Err(bad(format!("row {i} is {label:?}, expected {}", pool.label(i))));
            }
            let w: f64 = w
                .trim()
                .parse()
                .map_err(|e| bad(format!("bad weight in {line:?}: {e}")))?;
            if !(w >= 0.0 && w <= 1.0) {
                return Err(bad(format!("weight {w} outside [0, 1]")));
            }
            weights.push(w);
        }
        let line = lines.next().ok_or_else(|| bad("missing `selected:` footer".into()))?;
        let label = line
            .strip_prefix("selected:")
            .map(str::trim)
            .ok_or_else(|| bad(format!("expected `selected:`, found {line:?}")))?;
        let selected = (0..pool.len())
            .find(|&i| pool.label(i) == label)
            .ok_or_else(|| bad(format!("selected combination {label} is not in the pool")))?;
        let max = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if weights[selected] < max {
            return Err(bad(format!("selected {label} does not carry the largest weight")));
        }
        if let Some(extra) = lines.next() {
            return Err(bad(format!("unexpected trailing line {extra:?}")));
        }
        Ok(Self {
            pool,
            weights,
            selected,
            config_hash,
        })
    }

    pub fn export(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::format(path, message),
            other => other,
        })
    }
}

const CALTECH101_WEIGHTS: &str = include_str!("../../data/caltech101_search_weights.txt");

/// Published path weights for the Caltech101 search (40 epochs). The
/// stored weights do not sum exactly to 1.
pub fn caltech101_fixture() -> Result<SearchResult> {
    SearchResult::parse(CALTECH101_WEIGHTS)
}
