//! Multi-granularity matching attention network for multi-label query
//! intent classification.
//!
//! The crate is self-contained: a small reverse-mode tensor engine
//! ([`tape`]), character-level text handling ([`text`]), a shared token
//! encoder ([`encoder`]), the matching network ([`model`]), Adam training
//! with checkpoints ([`train`]) and micro/macro evaluation ([`eval`]).

pub mod config;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod model;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod text;
pub mod train;

pub use config::{ModelConfig, RunConfig, TrainConfig, Variant};
pub use error::{Error, Result};
pub use eval::{compute_metrics, decide, evaluate, MetricsReport, Prf};
pub use model::MmanModel;
pub use params::{ParamId, ParamSet};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
pub use text::{CategorySet, LabeledQuery, TokenSequence, Vocab};
pub use train::{AdamState, Checkpoint, TrainReport};
