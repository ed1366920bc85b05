//! Dialogue generation with a jointly trained preference estimator.
//!
//! The crate holds a small decoder-only transformer whose parameters serve
//! both next-token prediction and a scalar preference score, the data
//! pipeline that turns annotated dialogues into training quadruples, the
//! joint trainer, top-k decoding with preference-ranked selection, and the
//! evaluation metrics used to compare ranking strategies.
//!
//! Numeric code is generic over [`Scalar`]; [`Model`] (`f32`) is used for
//! training and serving and [`Model64`] for gradient checking.

pub mod data;
pub mod dialogue;
pub mod error;
pub mod eval;
pub mod generation;
pub mod model;
mod ops;
pub mod scalar;
pub mod train;
pub mod vocab;

pub use dialogue::{DialogueContext, Role, Utterance};
pub use error::{Error, Result};
pub use model::{ModelConfig, ModelState};
pub use ops::{sigmoid, softplus};
pub use scalar::{Dtype, Scalar};
pub use vocab::Vocabulary;

pub type Model = ModelState<f32>;
pub type Model64 = ModelState<f64>;
