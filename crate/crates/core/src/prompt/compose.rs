use crate::encoders::{DualEncoder, EncoderVars};
use crate::error::{Error, Result};
use crate::prompt::{interior_order, BankVars, DropPolicy, PositionMap, PromptLayout, Segment};
use crate::tensor_core::{Graph, Var};
use crate::vocab::Vocabulary;

/// Frozen encoder handles plus the tokenizer, bound into one graph.
#[derive(Clone, Copy)]
pub struct TextContext<'a> {
    pub encoder: &'a DualEncoder,
    pub vars: &'a EncoderVars,
    pub vocab: &'a Vocabulary,
}

/// An embedding sequence ready for the text tower.
#[derive(Clone, Debug)]
pub struct ComposedPrompt {
    pub sequence: Var,
    pub positions: PositionMap,
    pub class_name: String,
}

/// Hidden sequence between two transformer blocks with its position map.
#[derive(Clone, Debug)]
pub struct LayerState {
    pub hidden: Var,
    pub positions: PositionMap,
}

/// Fresh blocks spliced in by [`apply_drop_policy`]. Attribute vectors are
/// indexed by attribute; entries a policy does not touch may be left empty.
#[derive(Clone, Debug, Default)]
pub struct Replacements {
    pub class_soft: Option<Var>,
    pub attribute_soft: Vec<Var>,
    pub attribute_hard: Vec<Var>,
}

struct Tokens {
    prefix: Vec<usize>,
    suffix: Vec<usize>,
    class: Vec<usize>,
    attributes: Vec<Vec<usize>>,
}

fn tokenize(vocab: &Vocabulary, layout: &PromptLayout, class_name: &str) -> Result<Tokens> {
    let mut unknown = Vec::new();
    let mut lookup = |text: &str| match vocab.tokenize(text) {
        Ok(ids) => ids,
        Err(Error::Tokenization { words }) => {
            unknown.extend(words);
            Vec::new()
        }
        Err(e) => {
            unknown.push(format!("{text} ({e})"));
            Vec::new()
        }
    };
    let class = lookup(class_name);
    let attributes: Vec<Vec<usize>> = layout.attribute_names.iter().map(|a| lookup(a)).collect();
    if !unknown.is_empty() {
        return Err(Error::Tokenization { words: unknown });
    }
    Ok(Tokens {
        prefix: vec![vocab.start_id()],
        suffix: vec![vocab.end_id()],
        class,
        attributes,
    })
}

/// `[sot][T_1..T_M][CLS][eot]`.
pub fn compose_classic(
    g: &mut Graph,
    ctx: TextContext<'_>,
    bank: &BankVars,
    class_name: &str,
) -> Result<ComposedPrompt> {
    compose_shallow(g, ctx, bank, &PromptLayout::classic(), class_name)
}

/// Builds the input-layer sequence for `layout`. Zero-length soft blocks are
/// omitted from both the sequence and the position map.
pub fn compose_shallow(
    g: &mut Graph,
    ctx: TextContext<'_>,
    bank: &BankVars,
    layout: &PromptLayout,
    class_name: &str,
) -> Result<ComposedPrompt> {
    let k = layout.attribute_names.len();
    if bank.attribute_blocks.len() < k {
        return Err(Error::Contract(format!(
            "layout anchors {k} attributes but the bank has {} attribute blocks",
            bank.attribute_blocks.len()
        )));
    }
    let tokens = tokenize(ctx.vocab, layout, class_name)?;
    let mut parts: Vec<(Segment, Var)> = Vec::new();
    let embed = |g: &mut Graph, ids: &[usize]| ctx.encoder.embed_tokens(g, ctx.vars, ids);
    parts.push((Segment::Prefix, embed(g, &tokens.prefix)?));
    for seg in interior_order(layout, k) {
        let var = match seg {
            Segment::AttributeSoft(i) => bank.attribute_blocks[i],
            Segment::AttributeHard(i) => embed(g, &tokens.attributes[i])?,
            Segment::ClassSoft => bank.class_block,
            Segment::ClassHard => embed(g, &tokens.class)?,
            Segment::Prefix | Segment::Suffix => unreachable!("sentinels are not interior"),
        };
        if g.shape(var)[0] > 0 {
            parts.push((seg, var));
        }
    }
    parts.push((Segment::Suffix, embed(g, &tokens.suffix)?));
    let lengths: Vec<(Segment, usize)> = parts.iter().map(|&(s, v)| (s, g.shape(v)[0])).collect();
    let vars: Vec<Var> = parts.iter().map(|&(_, v)| v).collect();
    Ok(ComposedPrompt {
        sequence: g.concat_rows(&vars)?,
        positions: PositionMap::from_lengths(&lengths),
        class_name: class_name.to_string(),
    })
}

/// Replaces the positions selected by `policy` with the matching
/// replacement blocks. Class tokens and sentinels are never touched.
pub fn apply_drop_policy(
    g: &mut Graph,
    state: &LayerState,
    policy: DropPolicy,
    replacements: &Replacements,
) -> Result<LayerState> {
    let mut parts = Vec::with_capacity(state.positions.entries().len());
    for (seg, range) in state.positions.entries() {
        let fresh = match (*seg, policy) {
            (Segment::ClassSoft, _) => Some(
                replacements
                    .class_soft
                    .ok_or_else(|| Error::Contract("missing class soft replacement".into()))?,
            ),
            (Segment::AttributeSoft(k), DropPolicy::PartialDrop | DropPolicy::FullDrop) => {
                Some(pick(&replacements.attribute_soft, k, "attribute soft")?)
            }
            (Segment::AttributeHard(k), DropPolicy::FullDrop) => {
                Some(pick(&replacements.attribute_hard, k, "attribute hard")?)
            }
            _ => None,
        };
        let part = match fresh {
            Some(v) => {
                let rows = g.shape(v)[0];
                if rows != range.len() {
                    return Err(Error::Contract(format!(
                        "{seg:?} replacement has {rows} rows, position holds {}",
                        range.len()
                    )));
                }
                v
            }
            None => g.slice_rows(state.hidden, range.start, range.end)?,
        };
        parts.push(part);
    }
    Ok(LayerState {
        hidden: g.concat_rows(&parts)?,
        positions: state.positions.clone(),
    })
}

fn pick(blocks: &[Var], k: usize, what: &str) -> Result<Var> {
    blocks
        .get(k)
        .copied()
        .ok_or_else(|| Error::Contract(format!("missing {what} replacement for attribute {k}")))
}

/// Observer invoked with the state entering each block `1..num_layers`
/// (0-based), after any replacement.
pub type LayerObserver<'a> = dyn FnMut(&Graph, usize, &LayerState) + 'a;

/// Text feature for one class under `layout`. Shallow layouts run the
/// tower unmodified; deep layouts refresh positions before blocks
/// `1..depth` (0-based) using per-layer blocks from the bank.
pub fn deep_forward(
    g: &mut Graph,
    ctx: TextContext<'_>,
    bank: &BankVars,
    layout: &PromptLayout,
    class_name: &str,
    mut observer: Option<&mut LayerObserver<'_>>,
) -> Result<Var> {
    layout.validate(ctx.encoder.config.num_layers)?;
    let composed = compose_shallow(g, ctx, bank, layout, class_name)?;
    if !layout.is_deep() && observer.is_none() {
        return ctx.encoder.encode_text(g, ctx.vars, composed.sequence, None);
    }
    let deep_layers = layout.depth - 1;
    if bank.deep_class_blocks.len() < deep_layers {
        return Err(Error::Contract(format!(
            "depth {} needs {deep_layers} deep class blocks, bank has {}",
            layout.depth,
            bank.deep_class_blocks.len()
        )));
    }
    let hard_ids = if layout.drop_policy == DropPolicy::FullDrop {
        tokenize(ctx.vocab, layout, class_name)?.attributes
    } else {
        Vec::new()
    };
    let positions = composed.positions.clone();
    let mut hook = |g: &mut Graph, block: usize, hidden: Var| -> Result<Var> {
        let mut state = LayerState {
            hidden,
            positions: positions.clone(),
        };
        if block < layout.depth {
            let layer = block - 1;
            let mut repl = Replacements {
                class_soft: Some(bank.deep_class_blocks[layer]),
                ..Replacements::default()
            };
            if layout.drop_policy != DropPolicy::RetainAll {
                repl.attribute_soft = bank.deep_attribute_blocks.get(layer).cloned().unwrap_or_default();
            }
            for ids in &hard_ids {
                repl.attribute_hard.push(ctx.encoder.embed_tokens(g, ctx.vars, ids)?);
            }
            state = apply_drop_policy(g, &state, layout.drop_policy, &repl)?;
        }
        if let Some(obs) = observer.as_deref_mut() {
            obs(g, block, &state);
        }
        Ok(state.hidden)
    };
    ctx.encoder.encode_text(g, ctx.vars, composed.sequence, Some(&mut hook))
}

/// `[N × joint_dim]` text features, one row per class name.
pub fn class_features(
    g: &mut Graph,
    ctx: TextContext<'_>,
    bank: &BankVars,
    layout: &PromptLayout,
    class_names: &[String],
) -> Result<Var> {
    if class_names.is_empty() {
        return Err(Error::Data("no class names to encode".into()));
    }
    let rows = class_names
        .iter()
        .map(|name| deep_forward(g, ctx, bank, layout, name, None))
        .collect::<Result<Vec<_>>>()?;
    g.concat_rows(&rows)
}
