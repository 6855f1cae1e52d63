//! Paraphrase generation by dictionary-guided editing.
//!
//! The pipeline: ingest a paraphrase-pair dictionary, index its source
//! phrases, retrieve the top pairs for an input sentence, and generate a
//! paraphrase with a sequence-to-sequence model whose decoder attends
//! separately over the deletable (source-side) and insertable (target-side)
//! phrases of the retrieved pairs.

pub mod data_prep;
pub mod decoding;
pub mod dict_encoder;
pub mod evaluation;
pub mod error;
pub mod index;
pub mod manifest;
pub mod model;
pub mod ppdb;
pub mod training;
pub mod text;
pub mod trace;
pub mod vocab;

pub use error::{Error, Result};
