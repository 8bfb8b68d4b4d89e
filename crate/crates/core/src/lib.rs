//! Attribute-anchored soft prompt learning on a miniature, from-scratch
//! dual encoder.

pub mod error;
pub mod tensor_core;

pub use error::{Error, Result};
pub mod encoders;
pub mod pipeline;
pub mod prompt;
pub mod search;
pub mod seeds;
pub mod source;
pub mod synth;
pub mod train;
pub mod vocab;
