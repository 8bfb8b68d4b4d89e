//! Prompt training, learning-rate schedules, evaluation, and reporting.

mod metrics;
mod report;
mod split;
mod trainer;

pub use metrics::{cosine_lr, harmonic_mean, Schedule};
pub use report::{cross_dataset_eval, CrossDatasetReport, EvalReport, REPORT_FORMAT_VERSION};
pub use split::base_novel_split;
pub use trainer::{evaluate, predict, score, train_prompts, Evaluation, PromptModel, TrainConfig, TrainHistory};

#[cfg(test)]
mod tests;
