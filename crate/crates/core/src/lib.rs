//! Grammatical error correction with a multilayer convolutional
//! encoder-decoder, n-best rescoring and GEC evaluation.

pub mod decoder;
pub mod error;
pub mod gecmetrics;
pub mod mlconv;
pub mod ngramlm;
pub mod numcore;
pub mod pipeline;
pub mod pretrain;
pub mod rescorer;
pub mod synthetic;
pub mod textprep;
pub mod trainer;

pub use error::{Error, Result};

/// Generator used wherever randomness appears; always explicitly seeded.
pub type SeededRng = rand_chacha::ChaCha8Rng;
