//! Corpus filtering and evaluation toolkit for ASR error-correction data.
//!
//! The pipeline scores source/target training pairs under two
//! likelihood-ratio quality criteria (language-model fluency gain and
//! phoneme inferability), conservatively rewrites or discards noisy pairs,
//! and measures EC system output with CER / %EC / %LA reports. A seeded
//! synthetic generator provides labeled corpora for end-to-end testing.

pub mod align;
pub mod channel;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod filter;
pub mod lm;
pub mod synth;

pub use error::{Error, Result};
