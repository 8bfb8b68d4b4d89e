//! Versioned JSON checkpoint for the frozen dual encoder and its vocabulary.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoders::{DualEncoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

pub const ENCODER_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderCheckpoint {
    pub format_version: u32,
    pub config: EncoderConfig,
    pub vocabulary: Vocabulary,
    pub encoder: DualEncoder,
}

impl EncoderCheckpoint {
    pub fn new(encoder: DualEncoder, vocabulary: Vocabulary) -> Result<Self> {
        if vocabulary.len() != encoder.config.vocab_size {
            return Err(Error::Configuration(format!(
                "vocabulary has {} words but encoder vocab_size is {}",
                vocabulary.len(),
                encoder.config.vocab_size
            )));
        }
        Ok(Self {
            format_version: ENCODER_FORMAT_VERSION,
            config: encoder.config.clone(),
            vocabulary,
            encoder,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).expect("checkpoint serializes");
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint; when `expected` is given its config must match
    /// the header exactly.
    pub fn load(path: &Path, expected: Option<&EncoderConfig>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if ckpt.format_version != ENCODER_FORMAT_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported encoder format version {}", ckpt.format_version),
            ));
        }
        if ckpt.config != ckpt.encoder.config {
            return Err(Error::format(path, "header config disagrees with stored weights"));
        }
        if let Some(expected) = expected {
            if &ckpt.config != expected {
                return Err(Error::Configuration(format!(
                    "checkpoint {} was written for {:?}, runtime config is {:?}",
                    path.display(),
                    ckpt.config,
                    expected
                )));
            }
        }
        ckpt.config.validate()?;
        Ok(ckpt)
    }
}
