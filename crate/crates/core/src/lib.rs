//! Few-shot text classification against a black-box encoder.
//!
//! The encoder is only ever called for inference: pooled hidden states at the
//! mask slot of a templated input feed a small MLP head. A prompt-finetuned
//! teacher pseudo-labels unlabeled text to enlarge the MLP's training set.

pub mod augment;
pub mod backends;
pub mod classifier;
pub mod corpus;
pub mod error;
pub mod harness;
pub mod hashing;
pub mod jsonl;
pub mod numeric;
pub mod prompt;
pub mod synthetic;
pub mod teacher;

pub use error::{Error, Result};
