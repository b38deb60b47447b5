//! Reasoning-augmented universal multimodal retrieval at desk scale.
//!
//! The pipeline has five stages, each a module:
//!
//! - [`datamodel`]: corpus, query and task schemas in line-delimited JSON.
//! - [`enhance`]: category routing, prompt construction and VLM dispatch that
//!   turn multimodal inputs into self-contained text.
//! - [`embed`]: a hashed bag-of-tokens encoder with a trainable two-tower
//!   projection and an InfoNCE trainer.
//! - [`index`]: exact top-k search over normalized embeddings.
//! - [`eval`]: Recall@K, ablation orchestration and report rendering.
//!
//! [`synth`] generates a benchmark whose visual evidence is invisible without
//! enhancement, together with a mock VLM that plays the enhancer.

pub mod datamodel;
pub mod embed;
pub mod enhance;
pub mod error;
pub mod eval;
pub mod index;
pub mod par;
pub mod synth;

pub use error::{Error, Result};
