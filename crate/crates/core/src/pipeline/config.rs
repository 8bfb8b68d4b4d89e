use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoders::{AlignmentConfig, EncoderConfig};
use crate::error::{Error, Result};
use crate::prompt::{AttributePosition, ClassPosition, DropPolicy, InitScheme, PromptLayout};
use crate::search::SearchConfig;
use crate::seeds::sha256_hex;
use crate::source::LlmClientConfig;
use crate::synth::{CorpusConfig, TaskSpec};
use crate::train::{Schedule, TrainConfig};

/// Encoder shape; vocabulary size and raw feature width are filled in from
/// the world.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSettings {
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub max_seq_len: usize,
    pub joint_dim: usize,
    pub temperature: f64,
    pub image_hidden_dim: usize,
    pub init_std: f64,
    pub fan_in_init: bool,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        let d = EncoderConfig::default();
        Self {
            embed_dim: d.embed_dim,
            num_layers: d.num_layers,
            num_heads: d.num_heads,
            max_seq_len: d.max_seq_len,
            joint_dim: d.joint_dim,
            temperature: d.temperature,
            image_hidden_dim: d.image_hidden_dim,
            init_std: d.init_std,
            fan_in_init: true,
        }
    }
}

impl EncoderSettings {
    pub fn to_config(&self, vocab_size: usize, raw_feature_dim: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            embed_dim: self.embed_dim,
            num_layers: self.num_layers,
            num_heads: self.num_heads,
            max_seq_len: self.max_seq_len,
            joint_dim: self.joint_dim,
            temperature: self.temperature,
            raw_feature_dim,
            image_hidden_dim: self.image_hidden_dim,
            init_std: self.init_std,
            fan_in_init: self.fan_in_init,
        }
    }
}

/// The class universe, its caption corpus, and the shared encoder.
/// `task.seed` is replaced per run by the run's data sub-seed;
/// `task.world_seed` fixes the structure and the encoder.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub task: TaskSpec,
    pub corpus: CorpusConfig,
    pub encoder: EncoderSettings,
    pub alignment: AlignmentConfig,
}

impl WorldConfig {
    /// Digest of everything that determines the aligned encoder.
    pub fn encoder_key(&self) -> String {
        let task = TaskSpec {
            seed: 0,
            samples_per_class: 0,
            val_samples_per_class: 0,
            test_samples_per_class: 0,
            noise_std: 0.0,
            ..self.task.clone()
        };
        let json = serde_json::to_vec(&(&task, &self.corpus, &self.encoder, &self.alignment)).expect("serializes");
        sha256_hex(&json)[..16].to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSource {
    pub client: LlmClientConfig,
    pub num_bases: usize,
}

impl Default for LlmSource {
    fn default() -> Self {
        Self {
            client: LlmClientConfig::default(),
            num_bases: 5,
        }
    }
}

/// Where the attribute bases come from. Exactly one of `fixture`,
/// `words` and `llm` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributeSource {
    pub fixture: Option<String>,
    pub words: Option<Vec<String>>,
    pub llm: Option<LlmSource>,
    /// Search the pool of base combinations and train with the selected
    /// one; otherwise train with all bases as listed.
    pub search: bool,
}

impl Default for AttributeSource {
    fn default() -> Self {
        Self {
            fixture: Some("imagenet".into()),
            words: None,
            llm: None,
            search: true,
        }
    }
}

impl AttributeSource {
    pub fn validate(&self) -> Result<()> {
        let set = [self.fixture.is_some(), self.words.is_some(), self.llm.is_some()];
        if set.iter().filter(|&&s| s).count() != 1 {
            return Err(Error::Configuration(
                "exactly one attribute source (fixture, words or llm) must be set".into(),
            ));
        }
        if let Some(llm) = &self.llm {
            llm.client.validate()?;
            if llm.num_bases == 0 {
                return Err(Error::Configuration("llm.num_bases must be at least 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    pub schedule: Schedule,
    pub class_len: usize,
    pub attribute_len: usize,
    pub init: InitScheme,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            epochs: d.epochs,
            batch_size: d.batch_size,
            lr_init: d.lr_init,
            schedule: d.schedule,
            class_len: d.class_len,
            attribute_len: d.attribute_len,
            init: d.init,
        }
    }
}

impl TrainSettings {
    pub fn to_config(&self, layout: PromptLayout, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_init: self.lr_init,
            schedule: self.schedule,
            seed,
            layout,
            class_len: self.class_len,
            attribute_len: self.attribute_len,
            init: self.init,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutSettings {
    pub class_position: ClassPosition,
    pub attribute_position: AttributePosition,
    pub drop_policy: DropPolicy,
    pub depth: usize,
}

impl LayoutSettings {
    pub fn layout(&self, attributes: &[String]) -> PromptLayout {
        PromptLayout {
            attribute_names: attributes.to_vec(),
            class_token_position: self.class_position,
            attribute_position_style: self.attribute_position,
            drop_policy: self.drop_policy,
            depth: self.depth.max(1),
        }
    }
}

/// A full experiment description, read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Run seed for single-run commands.
    pub seed: u64,
    /// Run seeds for training, evaluation and ablation; results are
    /// averaged over them.
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Directory for aligned encoders; defaults to `<out_dir>/cache`.
    pub cache_dir: Option<PathBuf>,
    /// A dataset file written by `gen-data`, used instead of regenerating
    /// samples for every seed.
    pub dataset: Option<PathBuf>,
    pub world: WorldConfig,
    pub attributes: AttributeSource,
    pub search: SearchConfig,
    pub train: TrainSettings,
    pub layout: LayoutSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            seeds: vec![1, 2, 3],
            out_dir: PathBuf::from("runs"),
            cache_dir: None,
            dataset: None,
            world: WorldConfig::default(),
            attributes: AttributeSource::default(),
            search: SearchConfig::default(),
            train: TrainSettings::default(),
            layout: LayoutSettings {
                depth: 1,
                ..LayoutSettings::default()
            },
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Configuration(format!("invalid run config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Configuration(m) => Error::Configuration(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Configuration("seeds must not be empty".into()));
        }
        self.world.task.validate()?;
        self.attributes.validate()?;
        self.search.validate()?;
        self.train.to_config(self.layout.layout(&[]), 0).validate()?;
        self.layout.layout(&[]).validate(self.world.encoder.num_layers)?;
        if let Some(path) = &self.dataset {
            if !path.exists() {
                return Err(Error::Configuration(format!(
                    "dataset file {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.out_dir.join("cache"))
    }

    /// Digest of the whole configuration apart from output locations and
    /// seeds.
    pub fn hash(&self) -> String {
        let stripped = Self {
            seed: 0,
            seeds: Vec::new(),
            out_dir: PathBuf::new(),
            cache_dir: None,
            ..self.clone()
        };
        sha256_hex(stripped.to_toml().as_bytes())[..16].to_string()
    }
}
