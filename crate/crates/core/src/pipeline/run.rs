use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{RunConfig, World};
use crate::prompt::{PromptLayout, SoftPromptBank};
use crate::search::{enumerate_pool, search_task, SearchConfig, SearchResult};
use crate::seeds::{sha256_hex, sub_seed};
use crate::source::{fixture_bases, AttributeBases, HttpTransport, LlmClient};
use crate::synth::{generate_task, load_task, Task, TaskSpec};
use crate::train::{evaluate, train_prompts, EvalReport, PromptModel, TrainHistory};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Soft context followed by the class name.
    Classic,
    /// Soft context anchored by attribute words.
    Atprompt,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Classic => "classic",
            Method::Atprompt => "atprompt",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classic" => Ok(Method::Classic),
            "atprompt" => Ok(Method::Atprompt),
            other => Err(Error::Validation(format!("unknown method `{other}`"))),
        }
    }
}

/// Named sub-seeds of one run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunSeeds {
    pub data: u64,
    pub init: u64,
    pub search: u64,
    pub train: u64,
}

impl RunSeeds {
    pub fn new(seed: u64) -> Self {
        Self {
            data: sub_seed(seed, "data"),
            init: sub_seed(seed, "init"),
            search: sub_seed(seed, "search"),
            train: sub_seed(seed, "train"),
        }
    }
}

/// Trained soft tokens with the layout they were trained for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptCheckpoint {
    pub format_version: u32,
    pub method: Method,
    pub seed: u64,
    pub config_hash: String,
    pub encoder_key: String,
    pub layout: PromptLayout,
    pub bank: SoftPromptBank,
}

impl PromptCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("checkpoint serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::format(
                path,
                format!("unsupported checkpoint format version {}", ckpt.format_version),
            ));
        }
        ckpt.bank
            .check_layout(&ckpt.layout)
            .map_err(|e| Error::format(path, e.to_string()))?;
        Ok(ckpt)
    }
}

/// One trained and evaluated run.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: EvalReport,
    pub checkpoint: PromptCheckpoint,
    pub history: TrainHistory,
}

/// Runs of one configuration over a shared world.
pub struct Experiment<'a> {
    pub config: &'a RunConfig,
    pub world: &'a World,
}

impl<'a> Experiment<'a> {
    pub fn new(config: &'a RunConfig, world: &'a World) -> Result<Self> {
        config.validate()?;
        if world.key != config.world.encoder_key() {
            return Err(Error::Configuration(
                "world was built from a different configuration".into(),
            ));
        }
        Ok(Self { config, world })
    }

    pub fn task_spec(&self, seed: u64) -> TaskSpec {
        TaskSpec {
            seed: RunSeeds::new(seed).data,
            ..self.config.world.task.clone()
        }
    }

    /// The full class universe with samples for `seed`, or the configured
    /// dataset file.
    pub fn task(&self, seed: u64) -> Result<Task> {
        match &self.config.dataset {
            Some(path) => {
                let task = load_task(path, None)?;
                let structure = |s: &TaskSpec| TaskSpec { seed: 0, ..s.clone() };
                if structure(&task.spec) != structure(&self.config.world.task) {
                    return Err(Error::Configuration(format!(
                        "dataset {} was generated from a different task spec",
                        path.display()
                    )));
                }
                Ok(task)
            }
            None => generate_task(&self.task_spec(seed)),
        }
    }

    pub fn base_novel(&self, seed: u64) -> Result<(Task, Task)> {
        self.task(seed)?.split_base_novel()
    }

    /// Attribute bases from the configured source.
    pub fn bases(&self) -> Result<AttributeBases> {
        let src = &self.config.attributes;
        if let Some(name) = &src.fixture {
            return fixture_bases(name);
        }
        if let Some(words) = &src.words {
            return AttributeBases::manual("manual", words);
        }
        let llm = src.llm.as_ref().expect("validated: one source is set");
        let mut client_config = llm.client.clone();
        if client_config.cache_dir.is_none() {
            client_config.cache_dir = Some(self.config.out_dir.join("llm_cache"));
        }
        let client = LlmClient::new(client_config.clone(), HttpTransport::new(&client_config)?)?;
        let names = self.task(self.config.seed)?.class_names();
        let descriptions = client.describe_categories(&names)?;
        let dir = self.config.out_dir.join("attributes");
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let listing = serde_json::json!({
            "format_version": 1,
            "model": client_config.model,
            "descriptions": names.iter().zip(&descriptions).collect::<Vec<_>>(),
        });
        let path = dir.join("descriptions.json");
        std::fs::write(&path, serde_json::to_string_pretty(&listing).expect("serializes"))
            .map_err(|e| Error::io(&path, e))?;
        client.summarize_bases("llm", &descriptions, llm.num_bases)
    }

    fn search_config(&self, seed: u64) -> SearchConfig {
        SearchConfig {
            seed: RunSeeds::new(seed).search,
            ..self.config.search.clone()
        }
    }

    /// Digest tying a search result to its configuration, world and seed.
    pub fn search_hash(&self, seed: u64, bases: &AttributeBases) -> String {
        let inputs = serde_json::to_vec(&(
            self.search_config(seed).hash(),
            &self.config.world,
            &self.config.dataset,
            &bases.bases,
            seed,
        ))
        .expect("serializes");
        sha256_hex(&inputs)[..16].to_string()
    }

    pub fn search_path(&self, seed: u64) -> PathBuf {
        self.config.out_dir.join("search").join(format!("seed{seed}.txt"))
    }

    /// Searches the base pool on the base classes of `seed`'s data. A
    /// stored result with a matching hash is reused.
    pub fn search(&self, seed: u64) -> Result<SearchResult> {
        let bases = self.bases()?;
        let hash = self.search_hash(seed, &bases);
        let path = self.search_path(seed);
        if path.exists() {
            if let Ok(stored) = SearchResult::load(&path) {
                if stored.config_hash == hash && stored.pool.bases() == bases.bases.as_slice() {
                    log::info!("reusing search result {}", path.display());
                    return Ok(stored);
                }
            }
        }
        let (base, _) = self.base_novel(seed)?;
        let pool = enumerate_pool(&bases.bases)?;
        let (mut result, trace) = search_task(
            &base,
            &pool,
            &self.search_config(seed),
            &self.world.encoder,
            &self.world.vocab,
        )?;
        log::info!(
            "search seed {seed}: selected {} after {} steps",
            pool.label(result.selected),
            trace.alpha_losses.len()
        );
        result.config_hash = hash;
        let dir = path.parent().expect("search path has a parent");
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        result.export(&path)?;
        // Downstream steps use exactly what was stored.
        SearchResult::load(&path)
    }

    /// Attribute words used by the attribute-anchored prompt for `seed`.
    pub fn attributes(&self, seed: u64) -> Result<Vec<String>> {
        if self.config.attributes.search {
            Ok(self.search(seed)?.selected_words())
        } else {
            Ok(self.bases()?.bases)
        }
    }

    /// Trains on the base classes of `seed` and evaluates base and novel
    /// test accuracy.
    pub fn run(&self, method: Method, seed: u64) -> Result<RunOutput> {
        let attributes = match method {
            Method::Classic => Vec::new(),
            Method::Atprompt => self.attributes(seed)?,
        };
        self.run_with(method, seed, &self.config.layout.layout(&attributes))
    }

    /// As [`Experiment::run`] with an explicit layout.
    pub fn run_with(&self, method: Method, seed: u64, layout: &PromptLayout) -> Result<RunOutput> {
        let seeds = RunSeeds::new(seed);
        let (base, novel) = self.base_novel(seed)?;
        let train = self.config.train.to_config(layout.clone(), seeds.train);
        let (encoder, vocab) = (&self.world.encoder, &self.world.vocab);
        let mut bank = train.init_bank_with_seed(encoder, vocab, seeds.init)?;
        let history = train_prompts(&base, &train, &mut bank, encoder, vocab)?;
        let model = PromptModel {
            encoder,
            vocab,
            layout,
            bank: &bank,
        };
        let base_eval = evaluate(model, &base.class_names(), &base.test)?;
        let novel_eval = evaluate(model, &novel.class_names(), &novel.test)?;
        let config_hash = self.config.hash();
        let report = EvalReport::from_evaluations(
            method.as_str(),
            &layout.attribute_names,
            &config_hash,
            seed,
            &base_eval,
            &novel_eval,
        )?;
        Ok(RunOutput {
            report,
            checkpoint: PromptCheckpoint {
                format_version: CHECKPOINT_FORMAT_VERSION,
                method,
                seed,
                config_hash,
                encoder_key: self.world.key.clone(),
                layout: layout.clone(),
                bank,
            },
            history,
        })
    }

    /// Re-scores a stored checkpoint on its seed's test data.
    pub fn evaluate_checkpoint(&self, ckpt: &PromptCheckpoint) -> Result<EvalReport> {
        if ckpt.encoder_key != self.world.key {
            return Err(Error::Configuration(
                "checkpoint was trained against a different encoder".into(),
            ));
        }
        let (base, novel) = self.base_novel(ckpt.seed)?;
        let model = PromptModel {
            encoder: &self.world.encoder,
            vocab: &self.world.vocab,
            layout: &ckpt.layout,
            bank: &ckpt.bank,
        };
        let base_eval = evaluate(model, &base.class_names(), &base.test)?;
        let novel_eval = evaluate(model, &novel.class_names(), &novel.test)?;
        EvalReport::from_evaluations(
            ckpt.method.as_str(),
            &ckpt.layout.attribute_names,
            &ckpt.config_hash,
            ckpt.seed,
            &base_eval,
            &novel_eval,
        )
    }
}
