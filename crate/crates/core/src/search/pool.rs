use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::PromptLayout;

pub const MAX_BASES: usize = 12;

/// Every non-empty subset of the base attributes, ordered by size and then
/// lexicographically by base index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributePool {
    bases: Vec<String>,
    combinations: Vec<Vec<usize>>,
}

pub fn enumerate_pool<S: AsRef<str>>(bases: &[S]) -> Result<AttributePool> {
    let n = bases.len();
    if !(1..=MAX_BASES).contains(&n) {
        return Err(Error::Configuration(format!(
            "attribute pool needs between 1 and {MAX_BASES} bases, got {n}"
        )));
    }
    let bases: Vec<String> = bases.iter().map(|b| b.as_ref().trim().to_string()).collect();
    if let Some(b) = bases
        .iter()
        .find(|b| b.is_empty() || b.contains([',', '(', ')', ':']) || b.chars().any(char::is_control))
    {
        return Err(Error::Validation(format!("invalid base attribute {b:?}")));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = bases.iter().find(|b| !seen.insert(b.as_str())) {
        return Err(Error::Validation(format!("duplicate base attribute `{dup}`")));
    }
    let mut combinations = Vec::with_capacity((1 << n) - 1);
    for size in 1..=n {
        push_combinations(n, size, 0, &mut Vec::with_capacity(size), &mut combinations);
    }
    Ok(AttributePool { bases, combinations })
}

fn push_combinations(n: usize, size: usize, start: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if current.len() == size {
        out.push(current.clone());
        return;
    }
    for i in start..n {
        if n - i < size - current.len() {
            break;
        }
        current.push(i);
        push_combinations(n, size, i + 1, current, out);
        current.pop();
    }
}

impl AttributePool {
    pub fn bases(&self) -> &[String] {
        &self.bases
    }

    pub fn len(&self) -> usize {
        self.combinations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.combinations.is_empty()
    }

    /// Base indices of combination `i`.
    pub fn indices(&self, i: usize) -> &[usize] {
        &self.combinations[i]
    }

    pub fn words(&self, i: usize) -> Vec<String> {
        self.combinations[i].iter().map(|&k| self.bases[k].clone()).collect()
    }

    /// `(a, b)`-style label of combination `i`.
    pub fn label(&self, i: usize) -> String {
        format!("({})", self.words(i).join(", "))
    }

    /// Shallow search layout for combination `i`.
    pub fn layout(&self, i: usize) -> PromptLayout {
        PromptLayout::with_attributes(&self.words(i))
    }

    /// Position of the combination with exactly these words, in base order.
    pub fn position(&self, words: &[String]) -> Option<usize> {
        (0..self.len()).find(|&i| self.words(i) == words)
    }

    /// Whether combination `i` includes base `k`.
    pub fn contains(&self, i: usize, k: usize) -> bool {
        self.combinations[i].contains(&k)
    }
}
