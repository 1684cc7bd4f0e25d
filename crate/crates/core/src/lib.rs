//! Long-tailed semi-supervised fine-tuning over frozen embeddings.
//!
//! A linear probe with a low-rank residual adapter is trained FixMatch-style.
//! Textual class prototypes are momentum-fitted toward visual class means
//! ([`prototypes`]) and their similarity logits are fused with the probe
//! logits for pseudo-labeling and prediction ([`fusion`]).

// Negated comparisons are how NaN gets rejected in validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod fusion;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod prototypes;
pub mod rng;
pub mod trainer;

pub use config::ExperimentConfig;
pub use data::{EmbeddingSet, LongTailSpec, UnlabeledMode};
pub use error::{Error, Result};
pub use fusion::FusionConfig;
pub use linalg::Matrix;
pub use metrics::RunReport;
pub use model::ModelParams;
pub use prototypes::{PafConfig, TextPrototypes};
pub use trainer::{Arm, Dataset, TrainConfig, TrainState};
