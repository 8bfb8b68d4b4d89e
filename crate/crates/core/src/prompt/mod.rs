//! Prompt composition: soft-token banks, layouts, and the shallow and deep
//! attribute-anchored forward passes.

mod bank;
mod compose;
mod layout;

pub use bank::{init_soft_tokens, phrase_rows, BankVars, InitScheme, SoftPromptBank, INIT_PHRASE, SOFT_INIT_STD};
pub use compose::{
    apply_drop_policy, class_features, compose_classic, compose_shallow, deep_forward, ComposedPrompt, LayerObserver,
    LayerState, Replacements, TextContext,
};
pub use layout::{interior_order, AttributePosition, ClassPosition, DropPolicy, PositionMap, PromptLayout, Segment};
