//! Adaptive gate attention text classifier with corpus-level label
//! statistics.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] and [`autograd`]: dense tensors and a tape-based reverse-mode
//!   engine with every primitive the model needs.
//! * [`corpus`]: TSV ingestion, tokenization, vocabulary, padding and folds.
//! * [`tcol`]: term-count-of-labels tables built from training data.
//! * [`model`]: embedding, CNN/LSTM extractor, shared-space projection,
//!   adaptive gate, attention pooling and the output head.
//! * [`dropout`]: vanilla and leaky dropout masks.
//! * [`train`], [`metrics`], [`report`]: Adam training, cross-validation,
//!   evaluation metrics, Welch's t-test and run reports.
//! * [`gradcheck`]: finite-difference verification of every differentiable
//!   operation and of the full forward pass.

pub mod autograd;
pub mod corpus;
pub mod dropout;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod report;
pub mod synth;
pub mod tcol;
pub mod tensor;
pub mod train;

pub use autograd::{Graph, Var};
pub use corpus::{Corpus, Example, FoldPlan, Vocab};
pub use dropout::{DropoutKind, DropoutSpec, Mode};
pub use error::{Error, Result};
pub use model::{AgaModel, Extractor, ModelConfig};
pub use report::RunReport;
pub use tcol::TcolTable;
pub use tensor::{Scalar, Tensor};
pub use train::TrainConfig;
