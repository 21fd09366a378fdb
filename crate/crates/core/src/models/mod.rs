//! Network architectures, classification heads and classical baselines.

pub mod baselines;
mod config;
mod network;

pub use config::{Architecture, ModelConfig};
pub use network::{predict_multi, EmbeddingInput, EpochRecord, Forward, Mode, Model, Target, TrainedModel, EMBED_INIT};
