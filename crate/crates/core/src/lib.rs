//! Unsupervised image-to-image domain transfer with structural constraints.
//!
//! Trains a pair of cycle-consistent adversarial transformers between a
//! degraded domain (A: fog / rain / night) and a clean domain (B), with
//! optional perceptual-distance and edge-feature losses plus a
//! segmentation-augmented discriminator. Ships a synthetic paired
//! benchmark and a box-plot comparison report for evaluating
//! configurations against each other.

pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod eval;
pub mod extractors;
pub mod losses;
pub mod nets;
pub mod pool;
pub mod tensor;

pub use config::{builtin_config, load_experiment_config, ExperimentConfig, LrSchedule, PairTag};
pub use error::{Error, Result};
pub use losses::LossReport;
pub use tensor::{EdgeMap, FeatureStack, ImageTensor, SegMapStack};
