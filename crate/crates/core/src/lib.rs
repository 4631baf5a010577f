//! Hierarchical pronunciation assessment: CTC-based pronunciation
//! features, a phone/word/utterance model built from Conv-LLaMA blocks, an
//! ordinal contrastive regulariser, curriculum training and a synthetic
//! learner corpus, all on a small reverse-mode autodiff engine.

pub mod alignment;
pub mod aspects;
pub mod conv_llama;
pub mod ctc_gop;
pub mod curriculum;
pub mod error;
pub mod harness;
pub mod init;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod syncorpus;

pub use error::{Error, Result};
