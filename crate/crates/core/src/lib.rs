//! Larger-context recurrent language models.
//!
//! An LSTM language model whose sentence probabilities are conditioned on
//! the preceding sentences of the same document, through a bag-of-words,
//! sequence-of-bag-of-words or attention context encoder and either early
//! or late fusion. A count-based modified Kneser-Ney model serves as the
//! baseline.

pub mod config;
pub mod context;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod model;
pub mod ngram;
pub mod numeric;
pub mod rlm;
pub mod synth;
pub mod training;
pub mod variant;

pub use error::{Error, Result};
pub use model::{ContextMode, Model, ModelDims, ModelSpec};
pub use variant::Variant;
