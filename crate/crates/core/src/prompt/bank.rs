use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::DualEncoder;
use crate::error::{Error, Result};
use crate::prompt::{DropPolicy, PromptLayout};
use crate::seeds::rng_for;
use crate::tensor_core::{Graph, Tensor, Var};
use crate::vocab::Vocabulary;

/// Phrase whose embeddings seed the class block under phrase init.
pub const INIT_PHRASE: &str = "a photo of a";

/// Standard deviation used for random soft-token initialization.
pub const SOFT_INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    #[default]
    RandomNormal,
    /// Class block copied from the embeddings of a phrase such as "a photo of a".
    PhraseInit,
}

impl std::str::FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random_normal" => Ok(Self::RandomNormal),
            "phrase_init" => Ok(Self::PhraseInit),
            other => Err(Error::Validation(format!("unknown init scheme `{other}`"))),
        }
    }
}

impl std::fmt::Display for InitScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::RandomNormal => "random_normal",
            Self::PhraseInit => "phrase_init",
        })
    }
}

/// Every trainable soft token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftPromptBank {
    pub embed_dim: usize,
    /// `[M × d]`
    pub class_block: Tensor,
    /// One `[a_m × d]` block per anchored attribute.
    pub attribute_blocks: Vec<Tensor>,
    /// Replacement class blocks for blocks `2..=depth`.
    pub deep_class_blocks: Vec<Tensor>,
    /// Replacement attribute blocks per deep layer; only populated when the
    /// drop policy replaces attribute soft tokens.
    pub deep_attribute_blocks: Vec<Vec<Tensor>>,
}

/// Graph handles for a bound [`SoftPromptBank`].
#[derive(Clone, Debug)]
pub struct BankVars {
    pub class_block: Var,
    pub attribute_blocks: Vec<Var>,
    pub deep_class_blocks: Vec<Var>,
    pub deep_attribute_blocks: Vec<Vec<Var>>,
}

impl BankVars {
    /// Handles in [`SoftPromptBank::params_mut`] order.
    pub fn all(&self) -> Vec<Var> {
        let mut out = vec![self.class_block];
        out.extend(&self.attribute_blocks);
        out.extend(&self.deep_class_blocks);
        for layer in &self.deep_attribute_blocks {
            out.extend(layer);
        }
        out
    }
}

impl SoftPromptBank {
    /// Zero-filled bank shaped for `layout`, with class blocks of
    /// `class_len` rows and attribute blocks of `attribute_len` rows.
    pub fn for_layout(layout: &PromptLayout, embed_dim: usize, class_len: usize, attribute_len: usize) -> Self {
        let k = layout.attribute_names.len();
        let deep_layers = layout.depth.saturating_sub(1);
        let deep_attrs = layout.drop_policy != DropPolicy::RetainAll;
        Self {
            embed_dim,
            class_block: Tensor::zeros(&[class_len, embed_dim]),
            attribute_blocks: (0..k).map(|_| Tensor::zeros(&[attribute_len, embed_dim])).collect(),
            deep_class_blocks: (0..deep_layers)
                .map(|_| Tensor::zeros(&[class_len, embed_dim]))
                .collect(),
            deep_attribute_blocks: (0..deep_layers)
                .map(|_| {
                    if deep_attrs {
                        (0..k).map(|_| Tensor::zeros(&[attribute_len, embed_dim])).collect()
                    } else {
                        Vec::new()
                    }
                })
                .collect(),
        }
    }

    pub fn class_len(&self) -> usize {
        self.class_block.rows_cols().0
    }

    pub fn attribute_len(&self) -> usize {
        self.attribute_blocks.first().map_or(0, |t| t.rows_cols().0)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.class_block];
        out.extend(&self.attribute_blocks);
        out.extend(&self.deep_class_blocks);
        for layer in &self.deep_attribute_blocks {
            out.extend(layer);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.class_block];
        out.extend(self.attribute_blocks.iter_mut());
        out.extend(self.deep_class_blocks.iter_mut());
        for layer in &mut self.deep_attribute_blocks {
            out.extend(layer.iter_mut());
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BankVars {
        let mut leaf = |t: &Tensor| g.leaf(t.clone(), trainable);
        BankVars {
            class_block: leaf(&self.class_block),
            attribute_blocks: self.attribute_blocks.iter().map(&mut leaf).collect(),
            deep_class_blocks: self.deep_class_blocks.iter().map(&mut leaf).collect(),
            deep_attribute_blocks: self
                .deep_attribute_blocks
                .iter()
                .map(|layer| layer.iter().map(&mut leaf).collect())
                .collect(),
        }
    }

    /// Checks that the bank's blocks match what `layout` will consume.
    pub fn check_layout(&self, layout: &PromptLayout) -> Result<()> {
        let k = layout.attribute_names.len();
        if self.attribute_blocks.len() != k {
            return Err(Error::Contract(format!(
                "bank has {} attribute blocks, layout anchors {k} attributes",
                self.attribute_blocks.len()
            )));
        }
        let a = self.attribute_len();
        if self.attribute_blocks.iter().any(|b| b.rows_cols().0 != a) {
            return Err(Error::Contract("attribute blocks must all have the same length".into()));
        }
        let m = self.class_len();
        let wants_deep = layout.depth.saturating_sub(1);
        if self.deep_class_blocks.len() < wants_deep {
            return Err(Error::Contract(format!(
                "depth {} needs {wants_deep} deep class blocks, bank has {}",
                layout.depth,
                self.deep_class_blocks.len()
            )));
        }
        if self.deep_class_blocks.iter().any(|b| b.rows_cols().0 != m) {
            return Err(Error::Contract("deep class blocks must all have length M".into()));
        }
        if layout.drop_policy != DropPolicy::RetainAll && wants_deep > 0 {
            let ok = self.deep_attribute_blocks.len() >= wants_deep
                && self.deep_attribute_blocks[..wants_deep]
                    .iter()
                    .all(|layer| layer.len() == k && layer.iter().all(|b| b.rows_cols().0 == a));
            if !ok {
                return Err(Error::Contract(format!(
                    "drop policy {} needs per-layer attribute blocks",
                    layout.drop_policy
                )));
            }
        }
        Ok(())
    }
}

/// Fills a bank according to `scheme`. `phrase_rows` are embedding-table
/// rows of the initialization phrase; they are only read by
/// [`InitScheme::PhraseInit`], truncated to M rows or padded with random
/// normal rows.
pub fn init_soft_tokens(
    bank: &mut SoftPromptBank,
    scheme: InitScheme,
    seed: u64,
    phrase_rows: &[Vec<f64>],
) -> Result<()> {
    let mut rng = rng_for(seed, "soft-init");
    let d = bank.embed_dim;
    if let Some(bad) = phrase_rows.iter().find(|r| r.len() != d) {
        return Err(Error::Dimension(format!(
            "phrase embedding row has width {}, bank width is {d}",
            bad.len()
        )));
    }
    for t in bank.params_mut() {
        fill_normal(t, &mut rng);
    }
    if scheme == InitScheme::PhraseInit {
        let m = bank.class_len();
        let data = bank.class_block.data_mut();
        for (i, row) in phrase_rows.iter().take(m).enumerate() {
            data[i * d..(i + 1) * d].copy_from_slice(row);
        }
    }
    Ok(())
}

/// Embedding-table rows of `phrase`, one per word.
pub fn phrase_rows(encoder: &DualEncoder, vocab: &Vocabulary, phrase: &str) -> Result<Vec<Vec<f64>>> {
    let ids = vocab.tokenize(phrase)?;
    Ok(ids.iter().map(|&id| encoder.token_embedding.row(id).to_vec()).collect())
}

fn fill_normal(t: &mut Tensor, rng: &mut impl Rng) {
    let fresh = Tensor::randn(t.shape(), 0.0, SOFT_INIT_STD, rng);
    t.data_mut().copy_from_slice(fresh.data());
}
