//! Outside-attention multi-encoder document-level translation lab.

pub mod error;
pub mod exec;
pub mod tensor;
pub mod tokenizer;
pub mod corpus;
pub mod model;
pub mod trainer;
pub mod decoder;
pub mod evaluator;
pub mod repr;
pub mod checkpoint;

pub use error::{Error, Result};
