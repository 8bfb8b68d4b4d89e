use std::path::{Path, PathBuf};

use crate::encoders::{align_encoders, DualEncoder, EncoderCheckpoint};
use crate::error::{Error, Result};
use crate::pipeline::WorldConfig;
use crate::seeds::rng_for;
use crate::synth::{generate_task, AlignmentCorpus, TaskSpec};
use crate::vocab::Vocabulary;

/// The vocabulary and aligned, frozen encoder shared by every run over one
/// class universe.
#[derive(Clone, Debug)]
pub struct World {
    pub config: WorldConfig,
    pub key: String,
    pub vocab: Vocabulary,
    pub encoder: DualEncoder,
}

fn corpus(config: &WorldConfig) -> Result<AlignmentCorpus> {
    let spec = TaskSpec {
        samples_per_class: 1,
        val_samples_per_class: 0,
        test_samples_per_class: 0,
        ..config.task.clone()
    };
    AlignmentCorpus::from_task(&generate_task(&spec)?, &config.corpus)
}

impl World {
    /// Initializes the encoder from the world seed and aligns it on the
    /// caption corpus.
    pub fn build(config: &WorldConfig) -> Result<Self> {
        let corpus = corpus(config)?;
        let vocab = Vocabulary::new(corpus.words());
        let enc_config = config.encoder.to_config(vocab.len(), config.task.raw_feature_dim);
        let seed = config.task.world_seed;
        let mut encoder = DualEncoder::new(enc_config, &mut rng_for(seed, "encoder-init"))?;
        let mut rng = rng_for(seed, "alignment-batches");
        let batch = config.alignment.batch_size;
        let started = std::time::Instant::now();
        let losses = align_encoders(&mut encoder, &config.alignment, |_| {
            corpus.sample(&vocab, batch, &mut rng)
        })?;
        if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
            log::info!(
                "aligned encoder in {:.1?}: loss {first:.3} -> {last:.3} over {} steps",
                started.elapsed(),
                losses.len()
            );
        }
        Ok(Self {
            key: config.encoder_key(),
            config: config.clone(),
            vocab,
            encoder,
        })
    }

    pub fn cache_path(config: &WorldConfig, cache_dir: &Path) -> PathBuf {
        cache_dir.join(format!("encoder-{}.json", config.encoder_key()))
    }

    /// Loads the aligned encoder for `config` from `cache_dir`, building
    /// and storing it on a miss.
    pub fn load_or_build(config: &WorldConfig, cache_dir: &Path) -> Result<Self> {
        let path = Self::cache_path(config, cache_dir);
        let vocab = Vocabulary::new(corpus(config)?.words());
        let expected = config.encoder.to_config(vocab.len(), config.task.raw_feature_dim);
        if path.exists() {
            let ckpt = EncoderCheckpoint::load(&path, Some(&expected))?;
            if ckpt.vocabulary != vocab {
                return Err(Error::format(&path, "cached vocabulary does not match the world"));
            }
            log::info!("loaded encoder from {}", path.display());
            return Ok(Self {
                key: config.encoder_key(),
                config: config.clone(),
                vocab,
                encoder: ckpt.encoder,
            });
        }
        let world = Self::build(config)?;
        std::fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
        let tmp = path.with_extension("json.tmp");
        EncoderCheckpoint::new(world.encoder.clone(), world.vocab.clone())?.save(&tmp)?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(world)
    }
}
