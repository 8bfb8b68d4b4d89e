use serde::{Deserialize, Serialize};

use crate::encoders::DualEncoder;
use crate::error::{Error, Result};
use crate::prompt::{
    class_features, init_soft_tokens, phrase_rows, BankVars, InitScheme, SoftPromptBank, TextContext, INIT_PHRASE,
};
use crate::search::AttributePool;
use crate::seeds::sub_seed;
use crate::tensor_core::{Graph, Tensor, Var};
use crate::vocab::Vocabulary;

/// Path-weight logits, one per pool candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaVector {
    pub logits: Tensor,
}

impl AlphaVector {
    /// All-zero logits: a uniform mixture.
    pub fn zeros(w: usize) -> Self {
        Self {
            logits: Tensor::zeros(&[w]),
        }
    }

    pub fn len(&self) -> usize {
        self.logits.numel()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `softmax(α)`.
    pub fn weights(&self) -> Vec<f64> {
        softmax(self.logits.data())
    }
}

pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Soft tokens for every candidate: one class block shared by all of them
/// and a separate set of attribute blocks per candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateBanks {
    pub class_block: Tensor,
    /// `attribute_blocks[i][m]` is the block in front of the `m`-th
    /// attribute of candidate `i`.
    pub attribute_blocks: Vec<Vec<Tensor>>,
}

impl CandidateBanks {
    /// Seeded initialization; each candidate's blocks come from a stream
    /// named after its words, so they do not depend on pool order.
    pub fn init(
        pool: &AttributePool,
        encoder: &DualEncoder,
        vocab: &Vocabulary,
        class_len: usize,
        attribute_len: usize,
        scheme: InitScheme,
        seed: u64,
    ) -> Result<Self> {
        let d = encoder.config.embed_dim;
        let rows = match scheme {
            InitScheme::PhraseInit => phrase_rows(encoder, vocab, INIT_PHRASE)?,
            InitScheme::RandomNormal => Vec::new(),
        };
        let mut class = SoftPromptBank::for_layout(&Default::default(), d, class_len, attribute_len);
        init_soft_tokens(&mut class, scheme, sub_seed(seed, "search-class"), &rows)?;
        let mut attribute_blocks = Vec::with_capacity(pool.len());
        for i in 0..pool.len() {
            let mut bank = SoftPromptBank::for_layout(&pool.layout(i), d, 0, attribute_len);
            let label = format!("search-candidate:{}", pool.words(i).join("+"));
            init_soft_tokens(&mut bank, InitScheme::RandomNormal, sub_seed(seed, &label), &[])?;
            attribute_blocks.push(bank.attribute_blocks);
        }
        Ok(Self {
            class_block: class.class_block,
            attribute_blocks,
        })
    }

    pub fn num_candidates(&self) -> usize {
        self.attribute_blocks.len()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.class_block];
        out.extend(self.attribute_blocks.iter().flatten());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.class_block];
        out.extend(self.attribute_blocks.iter_mut().flatten());
        out
    }

    /// Binds every block once; the returned per-candidate views all hold
    /// the same class-block variable.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> (Vec<BankVars>, Vec<Var>) {
        let class_block = g.leaf(self.class_block.clone(), trainable);
        let mut all = vec![class_block];
        let views = self
            .attribute_blocks
            .iter()
            .map(|blocks| {
                let attribute_blocks: Vec<Var> = blocks.iter().map(|t| g.leaf(t.clone(), trainable)).collect();
                all.extend(&attribute_blocks);
                BankVars {
                    class_block,
                    attribute_blocks,
                    deep_class_blocks: Vec::new(),
                    deep_attribute_blocks: Vec::new(),
                }
            })
            .collect();
        (views, all)
    }

    /// A standalone bank for candidate `i`, for retraining or inspection.
    pub fn candidate_bank(&self, i: usize) -> SoftPromptBank {
        let (_, d) = self.class_block.rows_cols();
        SoftPromptBank {
            embed_dim: d,
            class_block: self.class_block.clone(),
            attribute_blocks: self.attribute_blocks[i].clone(),
            deep_class_blocks: Vec::new(),
            deep_attribute_blocks: Vec::new(),
        }
    }
}

/// Per-candidate logits `[b × C]` of image features against the class
/// prompts built from candidate `i`'s layout.
pub fn candidate_logits(
    g: &mut Graph,
    ctx: TextContext<'_>,
    pool: &AttributePool,
    banks: &[BankVars],
    i: usize,
    class_names: &[String],
    image_features: Var,
) -> Result<Var> {
    let w = class_features(g, ctx, &banks[i], &pool.layout(i), class_names)?;
    ctx.encoder.logits(g, image_features, w)
}

/// `Σ_i softmax(α)_i · logits_i`, summed in candidate order.
pub fn mixture_forward(
    g: &mut Graph,
    ctx: TextContext<'_>,
    pool: &AttributePool,
    alpha: Var,
    banks: &[BankVars],
    class_names: &[String],
    image_features: Var,
) -> Result<Var> {
    let w = pool.len();
    if banks.len() != w {
        return Err(Error::Contract(format!(
            "{} candidate banks for a pool of {w}",
            banks.len()
        )));
    }
    if g.value(alpha).numel() != w {
        return Err(Error::Contract(format!(
            "alpha has {} entries for a pool of {w}",
            g.value(alpha).numel()
        )));
    }
    let p = g.softmax_rows(alpha)?;
    let mut total = None;
    for i in 0..w {
        let logits = candidate_logits(g, ctx, pool, banks, i, class_names, image_features)?;
        let pi = g.element(p, i)?;
        let term = g.mul_scalar(logits, pi)?;
        total = Some(match total {
            None => term,
            Some(acc) => g.add(acc, term)?,
        });
    }
    Ok(total.expect("pool is non-empty"))
}
