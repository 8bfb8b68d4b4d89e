use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Fixture,
    Llm,
    Manual,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Fixture => "fixture",
            Provenance::Llm => "llm",
            Provenance::Manual => "manual",
        })
    }
}

/// An ordered list of attribute bases for one dataset.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeBases {
    pub dataset_name: String,
    pub bases: Vec<String>,
    pub provenance: Provenance,
}

impl AttributeBases {
    pub fn new(dataset_name: &str, bases: Vec<String>, provenance: Provenance) -> Result<Self> {
        if bases.is_empty() {
            return Err(Error::Validation("attribute bases must not be empty".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = bases.iter().find(|b| !seen.insert(b.as_str())) {
            return Err(Error::Validation(format!("duplicate attribute base `{dup}`")));
        }
        Ok(Self {
            dataset_name: dataset_name.to_string(),
            bases,
            provenance,
        })
    }

    /// Explicitly listed bases.
    pub fn manual<S: AsRef<str>>(dataset_name: &str, bases: &[S]) -> Result<Self> {
        Self::new(
            dataset_name,
            bases.iter().map(|b| b.as_ref().to_string()).collect(),
            Provenance::Manual,
        )
    }
}

/// One row of the bundled fixture table.
#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureRow {
    pub name: String,
    pub display_name: String,
    pub bases: Vec<String>,
    pub searched: Vec<String>,
}

#[derive(Deserialize)]
struct FixtureFile {
    dataset: Vec<FixtureRow>,
}

const FIXTURE_TABLE: &str = include_str!("../../data/attribute_bases.toml");

/// Every row of the bundled table, in table order.
pub fn fixture_table() -> Vec<FixtureRow> {
    let file: FixtureFile = toml::from_str(FIXTURE_TABLE).expect("bundled fixture table parses");
    file.dataset
}

pub fn fixture_names() -> Vec<String> {
    fixture_table().into_iter().map(|r| r.name).collect()
}

/// Bundled bases for `dataset_name`.
pub fn fixture_bases(dataset_name: &str) -> Result<AttributeBases> {
    let table = fixture_table();
    let row = table
        .iter()
        .find(|r| r.name == dataset_name)
        .ok_or_else(|| Error::Lookup {
            name: dataset_name.to_string(),
            available: fixture_names().join(", "),
        })?;
    AttributeBases::new(&row.name, row.bases.clone(), Provenance::Fixture)
}
