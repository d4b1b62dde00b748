//! Symbolic relationship model: a decoder-only transformer that reads a guide
//! token sequence and writes the accompanying response, trained with
//! scheduled sampling and decoded with (constrained) nucleus sampling.

mod model;
mod sampling;
mod train;

use std::collections::BTreeSet;
use std::path::Path;

use thiserror::Error;

pub use model::{
    DecisionModel, GenerationConfig, Hyperparams, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, INIT_STD,
    N_SPECIAL,
};
pub use sampling::{
    nucleus, sample_top_p, sample_top_p_traced, softmax_prefix, NucleusDraw, NUCLEUS_TOLERANCE,
};
pub use train::{
    evaluate_loss, loss_csv, train, write_loss_csv, EpochStats, TrainConfig, TrainReport,
    TrainingPair,
};

use crate::eval::{EvalError, Responder};
use crate::numerics::NumericsError;
use crate::perception::{PerceptionError, TokenSequence};

#[derive(Debug, Error)]
pub enum DecisionError {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("invalid training configuration: {0}")]
    InvalidTrainConfig(String),
    #[error("invalid generation settings: {0}")]
    InvalidGeneration(String),
    #[error("token id {id} outside alphabet of size {k}")]
    TokenOutOfRange { id: usize, k: usize },
    #[error("model alphabet is {model} but input uses {input}")]
    AlphabetMismatch { model: usize, input: usize },
    #[error("input layout of {len} tokens exceeds the positional table ({limit})")]
    TooLong { len: usize, limit: usize },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("no training pairs")]
    EmptyStream,
    #[error("non-finite loss at epoch {epoch}, step {step}, pair {item}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        item: usize,
    },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
}

impl DecisionError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

impl Responder for DecisionModel<f32> {
    fn respond(
        &self,
        guide: &TokenSequence,
        allowed: Option<&BTreeSet<usize>>,
        top_p: f64,
        seed: u64,
    ) -> Result<TokenSequence, EvalError> {
        let mut cfg = GenerationConfig::new(top_p, seed);
        if let Some(labels) = allowed {
            cfg = cfg.constrained_to(labels.clone());
        }
        self.generate(guide, &cfg)
            .map_err(|e| EvalError::Generation(e.to_string()))
    }
}
