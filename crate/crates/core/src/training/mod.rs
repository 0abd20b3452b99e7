//! Prompt tuning: label-subset sampling, the subset-invariant objective,
//! per-stage training, cross-stage transfer and baselines.

pub mod adafactor;
pub mod artifacts;
pub mod baselines;
pub mod config;
pub mod fit;
pub mod loss;
pub mod modular;
pub mod sampler;

pub use adafactor::{adafactor_step, AdafactorConfig, OptimizerState};
pub use artifacts::{load_artifacts, train_method, Artifacts, Inference, TrainOutcome};
pub use config::{Method, OptimizerKind, TrainConfig};
pub use fit::{FitSummary, LogRecord};
pub use loss::{subset_invariant_loss, SubsetLoss};
pub use modular::{run_in_the_wild, train_stage, ModularRun};
pub use sampler::{sample_label_subset, SubsetSampler, SubsetSamplerConfig};
