use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::tensor_core::{Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadWeights {
    pub query: Tensor,
    pub key: Tensor,
    pub value: Tensor,
    pub out: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub heads: Vec<HeadWeights>,
    pub attn_bias: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub mlp_in: Tensor,
    pub mlp_in_bias: Tensor,
    pub mlp_out: Tensor,
    pub mlp_out_bias: Tensor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageWeights {
    pub hidden: Tensor,
    pub hidden_bias: Tensor,
    pub out: Tensor,
    pub out_bias: Tensor,
}

/// Pre-norm transformer text tower, MLP image tower, and the projections
/// into the shared joint space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualEncoder {
    pub config: EncoderConfig,
    pub token_embedding: Tensor,
    pub positional: Tensor,
    pub layers: Vec<LayerWeights>,
    pub final_gain: Tensor,
    pub final_bias: Tensor,
    pub text_projection: Tensor,
    pub image: ImageWeights,
}

/// Graph handles for every encoder tensor, mirroring [`DualEncoder`].
#[derive(Clone, Debug)]
pub struct EncoderVars {
    pub token_embedding: Var,
    pub positional: Var,
    pub layers: Vec<LayerVars>,
    pub final_gain: Var,
    pub final_bias: Var,
    pub text_projection: Var,
    pub image: [Var; 4],
    all: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct LayerVars {
    pub ln1: (Var, Var),
    pub heads: Vec<[Var; 4]>,
    pub attn_bias: Var,
    pub ln2: (Var, Var),
    pub mlp_in: (Var, Var),
    pub mlp_out: (Var, Var),
}

impl EncoderVars {
    /// Every handle, in [`DualEncoder::params`] order.
    pub fn all(&self) -> &[Var] {
        &self.all
    }
}

/// Callback run on the hidden sequence before every transformer block after
/// the first. Receives the 0-based index of the block about to run.
pub type DeepHook<'a> = dyn FnMut(&mut Graph, usize, Var) -> Result<Var> + 'a;

fn matrix_is_table(shape: &[usize], config: &EncoderConfig) -> bool {
    shape == [config.vocab_size, config.embed_dim] || shape == [config.max_seq_len, config.embed_dim]
}

impl DualEncoder {
    /// Seeded normal initialization; layer-norm gains start at one.
    pub fn new(config: EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let std = config.init_std;
        let d = config.embed_dim;
        let dh = config.head_dim();
        let mlp = config.mlp_dim();
        let fan_in = config.fan_in_init;
        let mut normal = |shape: &[usize]| {
            let s = if fan_in && shape.len() == 2 && !matrix_is_table(shape, &config) {
                1.0 / (shape[0] as f64).sqrt()
            } else {
                std
            };
            Tensor::randn(shape, 0.0, s, rng)
        };
        let token_embedding = normal(&[config.vocab_size, d]);
        let positional = normal(&[config.max_seq_len, d]);
        let layers = (0..config.num_layers)
            .map(|_| LayerWeights {
                ln1_gain: Tensor::full(&[d], 1.0),
                ln1_bias: Tensor::zeros(&[d]),
                heads: (0..config.num_heads)
                    .map(|_| HeadWeights {
                        query: normal(&[d, dh]),
                        key: normal(&[d, dh]),
                        value: normal(&[d, dh]),
                        out: normal(&[dh, d]),
                    })
                    .collect(),
                attn_bias: normal(&[d]),
                ln2_gain: Tensor::full(&[d], 1.0),
                ln2_bias: Tensor::zeros(&[d]),
                mlp_in: normal(&[d, mlp]),
                mlp_in_bias: normal(&[mlp]),
                mlp_out: normal(&[mlp, d]),
                mlp_out_bias: normal(&[d]),
            })
            .collect();
        let text_projection = normal(&[d, config.joint_dim]);
        let image = ImageWeights {
            hidden: normal(&[config.raw_feature_dim, config.image_hidden_dim]),
            hidden_bias: normal(&[config.image_hidden_dim]),
            out: normal(&[config.image_hidden_dim, config.joint_dim]),
            out_bias: normal(&[config.joint_dim]),
        };
        Ok(Self {
            token_embedding,
            positional,
            layers,
            final_gain: Tensor::full(&[d], 1.0),
            final_bias: Tensor::zeros(&[d]),
            text_projection,
            image,
            config,
        })
    }

    /// Every weight tensor in a fixed order.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.token_embedding, &self.positional];
        for l in &self.layers {
            out.extend([&l.ln1_gain, &l.ln1_bias]);
            for h in &l.heads {
                out.extend([&h.query, &h.key, &h.value, &h.out]);
            }
            out.extend([
                &l.attn_bias,
                &l.ln2_gain,
                &l.ln2_bias,
                &l.mlp_in,
                &l.mlp_in_bias,
                &l.mlp_out,
                &l.mlp_out_bias,
            ]);
        }
        out.extend([&self.final_gain, &self.final_bias, &self.text_projection]);
        let im = &self.image;
        out.extend([&im.hidden, &im.hidden_bias, &im.out, &im.out_bias]);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.token_embedding, &mut self.positional];
        for l in &mut self.layers {
            out.push(&mut l.ln1_gain);
            out.push(&mut l.ln1_bias);
            for h in &mut l.heads {
                out.extend([&mut h.query, &mut h.key, &mut h.value, &mut h.out]);
            }
            out.extend([
                &mut l.attn_bias,
                &mut l.ln2_gain,
                &mut l.ln2_bias,
                &mut l.mlp_in,
                &mut l.mlp_in_bias,
                &mut l.mlp_out,
                &mut l.mlp_out_bias,
            ]);
        }
        out.extend([&mut self.final_gain, &mut self.final_bias, &mut self.text_projection]);
        let im = &mut self.image;
        out.extend([&mut im.hidden, &mut im.hidden_bias, &mut im.out, &mut im.out_bias]);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    /// Registers every weight in `g`. Frozen (`trainable = false`) is the
    /// normal mode during prompt learning.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> EncoderVars {
        let mut all = Vec::new();
        let mut leaf = |t: &Tensor| {
            let v = g.leaf(t.clone(), trainable);
            all.push(v);
            v
        };
        let token_embedding = leaf(&self.token_embedding);
        let positional = leaf(&self.positional);
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let ln1 = (leaf(&l.ln1_gain), leaf(&l.ln1_bias));
                let heads = l
                    .heads
                    .iter()
                    .map(|h| [leaf(&h.query), leaf(&h.key), leaf(&h.value), leaf(&h.out)])
                    .collect();
                LayerVars {
                    ln1,
                    heads,
                    attn_bias: leaf(&l.attn_bias),
                    ln2: (leaf(&l.ln2_gain), leaf(&l.ln2_bias)),
                    mlp_in: (leaf(&l.mlp_in), leaf(&l.mlp_in_bias)),
                    mlp_out: (leaf(&l.mlp_out), leaf(&l.mlp_out_bias)),
                }
            })
            .collect();
        let final_gain = leaf(&self.final_gain);
        let final_bias = leaf(&self.final_bias);
        let text_projection = leaf(&self.text_projection);
        let im = &self.image;
        let image = [
            leaf(&im.hidden),
            leaf(&im.hidden_bias),
            leaf(&im.out),
            leaf(&im.out_bias),
        ];
        EncoderVars {
            token_embedding,
            positional,
            layers,
            final_gain,
            final_bias,
            text_projection,
            image,
            all,
        }
    }

    /// Raw embedding-table rows for hard tokens.
    pub fn embed_tokens(&self, g: &mut Graph, vars: &EncoderVars, ids: &[usize]) -> Result<Var> {
        g.gather_rows(vars.token_embedding, ids)
    }

    /// Runs the text tower on a composed `[len × embed_dim]` embedding
    /// sequence and returns the `[1 × joint_dim]` unit feature read at the
    /// last (end-sentinel) position.
    pub fn encode_text(
        &self,
        g: &mut Graph,
        vars: &EncoderVars,
        sequence: Var,
        mut hook: Option<&mut DeepHook<'_>>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let (len, width) = match g.shape(sequence) {
            [l, w] => (*l, *w),
            s => return Err(Error::Dimension(format!("encode_text: expected a matrix, got {s:?}"))),
        };
        if width != cfg.embed_dim {
            return Err(Error::Dimension(format!(
                "encode_text: embedding width {width} != embed_dim {}",
                cfg.embed_dim
            )));
        }
        if len == 0 {
            return Err(Error::Dimension("encode_text: empty sequence".into()));
        }
        if len > cfg.max_seq_len {
            return Err(Error::Capacity {
                len,
                max: cfg.max_seq_len,
            });
        }
        let pos = g.slice_rows(vars.positional, 0, len)?;
        let mut h = g.add(sequence, pos)?;
        for (i, layer) in vars.layers.iter().enumerate() {
            if i > 0 {
                if let Some(hook) = hook.as_deref_mut() {
                    h = hook(g, i, h)?;
                    if g.shape(h) != [len, width] {
                        return Err(Error::Contract(format!(
                            "deep hook changed the sequence shape to {:?}",
                            g.shape(h)
                        )));
                    }
                }
            }
            h = self.block(g, layer, h)?;
        }
        let last = g.slice_rows(h, len - 1, len)?;
        let normed = g.layer_norm(last, vars.final_gain, vars.final_bias)?;
        let projected = g.matmul(normed, vars.text_projection)?;
        g.l2_normalize_rows(projected)
    }

    fn block(&self, g: &mut Graph, layer: &LayerVars, x: Var) -> Result<Var> {
        let scale = 1.0 / (self.config.head_dim() as f64).sqrt();
        let normed = g.layer_norm(x, layer.ln1.0, layer.ln1.1)?;
        let mut attn: Option<Var> = None;
        for &[wq, wk, wv, wo] in &layer.heads {
            let q = g.matmul(normed, wq)?;
            let k = g.matmul(normed, wk)?;
            let v = g.matmul(normed, wv)?;
            let kt = g.transpose(k)?;
            let scores = g.matmul(q, kt)?;
            let scores = g.scale(scores, scale)?;
            let weights = g.softmax_rows(scores)?;
            let mixed = g.matmul(weights, v)?;
            let out = g.matmul(mixed, wo)?;
            attn = Some(match attn {
                Some(acc) => g.add(acc, out)?,
                None => out,
            });
        }
        let attn = attn.expect("at least one head");
        let attn = g.add_row(attn, layer.attn_bias)?;
        let x = g.add(x, attn)?;

        let normed = g.layer_norm(x, layer.ln2.0, layer.ln2.1)?;
        let hidden = g.matmul(normed, layer.mlp_in.0)?;
        let hidden = g.add_row(hidden, layer.mlp_in.1)?;
        let hidden = g.gelu(hidden)?;
        let out = g.matmul(hidden, layer.mlp_out.0)?;
        let out = g.add_row(out, layer.mlp_out.1)?;
        g.add(x, out)
    }

    /// Maps a `[batch × raw_feature_dim]` matrix to unit joint-space rows.
    pub fn encode_image(&self, g: &mut Graph, vars: &EncoderVars, images: Var) -> Result<Var> {
        let raw = self.config.raw_feature_dim;
        match g.shape(images) {
            [_, w] if *w == raw => {}
            s => {
                return Err(Error::Dimension(format!(
                    "encode_image: expected [batch × {raw}], got {s:?}"
                )))
            }
        }
        let [w1, b1, w2, b2] = vars.image;
        let h = g.matmul(images, w1)?;
        let h = g.add_row(h, b1)?;
        let h = g.gelu(h)?;
        let o = g.matmul(h, w2)?;
        let o = g.add_row(o, b2)?;
        g.l2_normalize_rows(o)
    }

    /// Image features outside of any training graph.
    pub fn image_features(&self, images: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind_image_only(&mut g);
        let x = g.constant(images.clone());
        let u = self.encode_image(&mut g, &vars, x)?;
        Ok(g.value(u).clone())
    }

    fn bind_image_only(&self, g: &mut Graph) -> EncoderVars {
        // Text weights are not needed; binding everything keeps one code path.
        self.bind(g, false)
    }

    /// Cosine-similarity logits `u · wᵀ / τ` between unit image rows
    /// `[b × j]` and unit class rows `[n × j]`.
    pub fn logits(&self, g: &mut Graph, image_features: Var, class_features: Var) -> Result<Var> {
        let wt = g.transpose(class_features)?;
        let sims = g.matmul(image_features, wt)?;
        g.scale(sims, 1.0 / self.config.temperature)
    }
}

/// `p(c|x) = exp(cos(u, w_c)/τ) / Σ_i exp(cos(u, w_i)/τ)` for one image.
pub fn class_probabilities(similarities: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::Parameter(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if similarities.is_empty() {
        return Err(Error::Dimension("class_probabilities: no classes".into()));
    }
    let scaled: Vec<f64> = similarities.iter().map(|s| s / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Cosine similarity of two vectors (with the same norm guard as the graph).
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / ((na + crate::tensor_core::NORM_EPS) * (nb + crate::tensor_core::NORM_EPS))
}
