//! Character-level LSTM language models with cross-lingual layer transfer.
//!
//! A model is trained on a source language over a vocabulary of marked
//! character units shared by every language in a run. Its lowest `l` layers
//! initialize a target-language model, which is then fine-tuned and scored
//! with word, character and per-class perplexity.

pub mod analysis;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod neural;
pub mod training;

pub use error::{Error, ErrorKind, Result};
