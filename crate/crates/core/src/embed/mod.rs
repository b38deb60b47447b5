//! The desk-scale retriever: hashed token bags projected by a two-tower model.
//!
//! An input's *surface* is the token bag the encoder sees. Un-enhanced image
//! content contributes only its sidecar tokens. An enhanced document is its
//! enhanced text plus those same sidecar tokens; an enhanced query is its
//! enhanced text alone.

pub mod hashing;
pub mod loss;
pub mod model;
pub mod train;

use std::ops::Deref;

use crate::datamodel::{Document, EnhancedRecord, Query};
use crate::error::{Error, Result};

pub use hashing::{tokenize, TokenHasher};
pub use loss::{infonce_loss, LossOutput};
pub use model::{Matrix, TwoTowerModel};
pub use train::{
    sample_hard_negatives, train, NegativePools, Optimizer, TrainConfig, TrainLog, TrainingPair,
};

/// Unit-norm (or all-zero) vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Deref for Embedding {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl Embedding {
    pub fn normalized(mut values: Vec<f64>) -> Self {
        normalize(&mut values);
        Embedding(values)
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        self.0.iter().zip(other).map(|(a, b)| a * b).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }
}

/// Scales `v` to unit L2 norm; leaves the zero vector untouched.
pub fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

fn surface(id: &str, text_parts: &[&str], visual_tokens: &[String]) -> Result<Vec<String>> {
    if text_parts.iter().all(|t| t.trim().is_empty()) && visual_tokens.is_empty() {
        return Err(Error::SilentInput(id.to_owned()));
    }
    let mut tokens: Vec<String> = text_parts.iter().flat_map(|t| tokenize(t)).collect();
    tokens.extend(visual_tokens.iter().flat_map(|t| tokenize(t)));
    Ok(tokens)
}

/// Token bag of a document, enhanced or not.
pub fn document_surface(doc: &Document, enhanced: Option<&EnhancedRecord>) -> Result<Vec<String>> {
    let text = match enhanced {
        Some(r) => r.enhanced_text.as_str(),
        None => doc.text.as_deref().unwrap_or_default(),
    };
    surface(&doc.did, &[text], &doc.visual_tokens)
}

/// Token bag of a query: the enhanced text when given, otherwise the task
/// instruction, the raw text and the sidecar tokens.
pub fn query_surface(q: &Query, enhanced: Option<&EnhancedRecord>) -> Result<Vec<String>> {
    match enhanced {
        Some(r) => surface(&q.qid, &[&r.enhanced_text], &[]),
        None => surface(
            &q.qid,
            &[&q.instruction, q.text.as_deref().unwrap_or_default()],
            &q.visual_tokens,
        ),
    }
}

pub fn featurize_query(
    q: &Query,
    enhanced: Option<&EnhancedRecord>,
    hasher: &TokenHasher,
) -> Result<Vec<f64>> {
    Ok(hasher.embed_tokens(&query_surface(q, enhanced)?))
}

pub fn featurize_document(
    doc: &Document,
    enhanced: Option<&EnhancedRecord>,
    hasher: &TokenHasher,
) -> Result<Vec<f64>> {
    Ok(hasher.embed_tokens(&document_surface(doc, enhanced)?))
}

pub fn embed_query(
    q: &Query,
    enhanced: Option<&EnhancedRecord>,
    model: &TwoTowerModel,
) -> Result<Embedding> {
    let x = featurize_query(q, enhanced, &model.hasher())?;
    Ok(Embedding(model.project_query(&x)?))
}

pub fn embed_document(
    doc: &Document,
    enhanced: Option<&EnhancedRecord>,
    model: &TwoTowerModel,
) -> Result<Embedding> {
    let x = featurize_document(doc, enhanced, &model.hasher())?;
    Ok(Embedding(model.project_doc(&x)?))
}
