//! Text-to-text engines behind both extraction stages.
//!
//! [`SeqBackend`] is the only thing the pipeline and harness know about a
//! model. [`MockOracleBackend`] answers from gold annotations through the
//! codec itself, which makes every other module testable without weights.
//! [`WorkerBackend`] drives an external model process over JSON lines.

mod mock;
mod worker;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchor::AnchorScheme;

pub use mock::MockOracleBackend;
pub use worker::{from_native_sentinels, to_native_sentinels, WorkerBackend};

/// Environment variable pointing at the directory holding model assets.
pub const MODEL_DIR_ENV: &str = "OKIE_MODEL_DIR";
/// Environment variable overriding the worker command line.
pub const WORKER_CMD_ENV: &str = "OKIE_WORKER_CMD";
/// Worker command used when [`WORKER_CMD_ENV`] is unset.
pub const DEFAULT_WORKER_CMD: &str = "python3 scripts/okie_t5_worker.py";

/// Model names the worker adapter accepts.
pub const KNOWN_MODELS: &[&str] = &[
    "t5-small",
    "t5-base",
    "t5-large",
    "t5-xl",
    "flan-t5-base",
    "flan-t5-large",
    "flan-t5-xl",
];

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("unknown backend {0:?}")]
    UnknownBackend(String),
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend capability error: {0}")]
    Capability(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("backend returned {got} outputs for {expected} inputs")]
    LengthMismatch { expected: usize, got: usize },
    #[error("worker protocol error: {0}")]
    Protocol(String),
    #[error("epoch callback failed: {0}")]
    Callback(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoding {
    #[default]
    Greedy,
    Beam {
        width: u32,
    },
}

/// Fine-tuning hyperparameters. Defaults: batch 4, learning rate 5e-5,
/// 7 epochs, Adam, cross-entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub optimizer: String,
    pub loss: String,
    pub seed: u64,
    pub decoding: Decoding,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4,
            learning_rate: 5e-5,
            epochs: 7,
            optimizer: "adam".into(),
            loss: "cross_entropy".into(),
            seed: 0,
            decoding: Decoding::Greedy,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.batch_size == 0
            || self.epochs == 0
            || self.learning_rate.is_nan()
            || self.learning_rate <= 0.0
        {
            return Err(BackendError::Precondition(
                "batch_size, epochs and learning_rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrainingPair {
    pub input: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_completed: usize,
    pub pairs_seen: usize,
    pub final_loss: Option<f64>,
    /// True when no real optimisation happened (mock backends).
    pub synthetic: bool,
}

/// The set of special tokens a backend knows after a registration call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Acknowledgment {
    pub registered: Vec<String>,
}

/// Passed to the epoch callback during fine-tuning.
pub struct EpochEnd<'a> {
    pub epoch: usize,
    pub loss: Option<f64>,
    pub model: &'a dyn SeqBackend,
}

pub type EpochCallback<'a> = dyn FnMut(&EpochEnd<'_>) -> Result<(), BackendError> + 'a;

/// A text-to-text engine.
///
/// `generate` may be called concurrently. `fine_tune` and
/// `register_special_tokens` take the backend exclusively.
pub trait SeqBackend: Send + Sync {
    fn name(&self) -> &str;

    /// One output per input, in order.
    fn generate(&self, inputs: &[String]) -> Result<Vec<String>, BackendError>;

    fn register_special_tokens(
        &mut self,
        tokens: &[String],
    ) -> Result<Acknowledgment, BackendError>;

    /// Trains on `pairs`, invoking `on_epoch` after every completed epoch.
    fn fine_tune(
        &mut self,
        pairs: &[TrainingPair],
        config: &TrainConfig,
        on_epoch: &mut EpochCallback<'_>,
    ) -> Result<TrainReport, BackendError>;
}

/// Calls `generate` and checks the batch length contract.
pub fn generate_checked(
    backend: &dyn SeqBackend,
    inputs: &[String],
) -> Result<Vec<String>, BackendError> {
    if inputs.is_empty() {
        return Ok(Vec::new());
    }
    let outputs = backend.generate(inputs)?;
    if outputs.len() != inputs.len() {
        return Err(BackendError::LengthMismatch {
            expected: inputs.len(),
            got: outputs.len(),
        });
    }
    Ok(outputs)
}

/// Registers the tunable anchor tokens of an anchored scheme.
pub fn register_anchor_tokens(
    backend: &mut dyn SeqBackend,
    scheme: &AnchorScheme,
) -> Result<Acknowledgment, BackendError> {
    if !scheme.is_anchored() {
        return Err(BackendError::Precondition(
            "anchor registration requires an anchored scheme".into(),
        ));
    }
    backend.register_special_tokens(&scheme.tunable_tokens())
}

/// A backend selected by name on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendKind {
    Mock,
    Worker { model: String },
}

impl BackendKind {
    pub fn parse(name: &str) -> Result<Self, BackendError> {
        match name {
            "mock" => Ok(BackendKind::Mock),
            m if KNOWN_MODELS.contains(&m) => Ok(BackendKind::Worker {
                model: m.to_string(),
            }),
            other => Err(BackendError::UnknownBackend(other.to_string())),
        }
    }

    /// Starts a worker for this kind. Model assets are looked up under
    /// `$OKIE_MODEL_DIR/<model>`.
    pub fn spawn_worker(&self) -> Result<WorkerBackend, BackendError> {
        let BackendKind::Worker { model } = self else {
            return Err(BackendError::Precondition(
                "mock is not a worker backend".into(),
            ));
        };
        let root = std::env::var_os(MODEL_DIR_ENV)
            .ok_or_else(|| BackendError::Unavailable(format!("{MODEL_DIR_ENV} is not set")))?;
        let model_dir = PathBuf::from(root).join(model);
        if !model_dir.is_dir() {
            return Err(BackendError::Unavailable(format!(
                "model directory {} not found",
                model_dir.display()
            )));
        }
        let command = std::env::var(WORKER_CMD_ENV).unwrap_or_else(|_| DEFAULT_WORKER_CMD.into());
        let argv: Vec<String> = command.split_whitespace().map(str::to_string).collect();
        WorkerBackend::spawn(model, &argv, &model_dir)
    }
}
