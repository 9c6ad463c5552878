//! Open information extraction as span-corruption infilling.
//!
//! A sentence and its predicates are encoded as a text-to-text infilling
//! problem: each triple field becomes a sentinel-marked span, optionally
//! flanked by role anchors that fix the order in which fields are generated.
//!
//! - [`codec`]: building and parsing stage-1 and stage-2 strings.
//! - [`anchor`]: roles, generation orders, anchor rendering, voting.
//! - [`backend`]: the text-to-text engine contract, a gold-driven mock and a
//!   subprocess adapter for real models.
//! - [`pipeline`]: two-stage extraction over any backend.
//! - [`eval`]: tuple-match scoring, F1 and F1%.
//! - [`harness`]: corpora, sampling, training pairs and experiment runs.

pub mod anchor;
pub mod backend;
pub mod codec;
pub mod eval;
pub mod harness;
pub mod pipeline;

pub use anchor::{AnchorScheme, GenerationOrder, Role};
pub use backend::{MockOracleBackend, SeqBackend, TrainConfig};
pub use codec::{EncodedInstance, Sentence, SentinelId, Triple};
pub use eval::ScoreReport;
pub use harness::{ExperimentConfig, ExtractionExample};
pub use pipeline::{OrderPolicy, Pipeline};
