//! Declarative experiment runs over a shared aligned encoder, and the
//! artifact-writing commands built on them.

mod commands;
mod config;
mod run;
mod world;

pub use commands::{
    ablate, eval, gen_data, report, search_attrs, train, AblationAxis, AblationCell, AblationReport, Manifest,
    ABLATION_FORMAT_VERSION, MANIFEST_FORMAT_VERSION,
};
pub use config::{AttributeSource, EncoderSettings, LayoutSettings, LlmSource, RunConfig, TrainSettings, WorldConfig};
pub use run::{Experiment, Method, PromptCheckpoint, RunOutput, RunSeeds, CHECKPOINT_FORMAT_VERSION};
pub use world::World;

#[cfg(test)]
mod tests;
