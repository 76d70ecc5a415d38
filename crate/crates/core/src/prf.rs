//! Rocchio pseudo-relevance feedback over sparse vectors.
//!
//! The first pass retrieves `feedback_docs` documents, their stored vectors
//! are averaged into a centroid, and the expanded query
//! `alpha * q + beta * centroid` (truncated to `max_terms` terms) is run as
//! the second pass. There is no negative-feedback term.

use std::collections::BTreeMap;
use std::collections::HashSet;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sparse_index::{ImpactIndex, ScoredHit, Strategy};
use crate::trec_io::{Run, SparseVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocchioParams {
    /// Weight of the original query.
    pub alpha: f64,
    /// Weight of the feedback centroid.
    pub beta: f64,
    /// Number of first-pass documents used as feedback.
    pub feedback_docs: usize,
    /// Maximum number of terms kept in the expanded query.
    pub max_terms: usize,
}

impl Default for RocchioParams {
    fn default() -> Self {
        RocchioParams {
            alpha: 1.0,
            beta: 0.75,
            feedback_docs: 10,
            max_terms: 128,
        }
    }
}

impl RocchioParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("rocchio: {msg}")));
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad("alpha must be a finite value >= 0");
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad("beta must be a finite value >= 0");
        }
        if self.alpha + self.beta <= 0.0 {
            return bad("alpha + beta must be positive");
        }
        if self.feedback_docs == 0 {
            return bad("feedback depth must be at least 1");
        }
        if self.max_terms == 0 {
            return bad("expanded queries need at least one term");
        }
        Ok(())
    }
}

/// Mixes a query with the mean of its feedback vectors and keeps the
/// `max_terms` heaviest terms (ties by ascending term). The result keeps
/// the query's id.
pub fn rocchio_expand(query: &SparseVector, feedback: &[SparseVector], params: &RocchioParams) -> Result<SparseVector> {
    params.validate()?;
    if feedback.is_empty() {
        return Err(Error::InvalidArgument("rocchio: empty feedback set".into()));
    }
    // Sum in feedback order so the result does not depend on hashing.
    let mut sums: BTreeMap<&str, f64> = BTreeMap::new();
    for doc in feedback {
        for (term, w) in doc.iter() {
            *sums.entry(term).or_insert(0.0) += w as f64;
        }
    }
    let n = feedback.len() as f64;
    let mut mixed: BTreeMap<&str, f64> = BTreeMap::new();
    for (term, w) in query.iter() {
        mixed.insert(term, params.alpha * w as f64);
    }
    for (term, sum) in sums {
        *mixed.entry(term).or_insert(0.0) += params.beta * (sum / n);
    }

    let mut weighted: Vec<(&str, f32)> = mixed
        .into_iter()
        .map(|(t, w)| (t, w as f32))
        .filter(|&(_, w)| w > 0.0 && w.is_finite())
        .collect();
    weighted.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    weighted.truncate(params.max_terms);

    let weights = weighted.into_iter().map(|(t, w)| (t.to_string(), w)).collect();
    Ok(SparseVector::from_map_unchecked(query.id().to_string(), weights))
}

/// Two-pass feedback search. When the first pass finds nothing the query
/// is searched unchanged.
pub fn prf_search(
    index: &ImpactIndex,
    query: &SparseVector,
    k: usize,
    params: &RocchioParams,
) -> Result<Vec<ScoredHit>> {
    params.validate()?;
    let expanded = expand_from_index(index, query, params)?;
    Ok(index.search(expanded.as_ref().unwrap_or(query), k))
}

/// Runs the first pass and returns the expanded query, or `None` when the
/// first pass retrieved nothing.
pub fn expand_from_index(
    index: &ImpactIndex,
    query: &SparseVector,
    params: &RocchioParams,
) -> Result<Option<SparseVector>> {
    let first = index.search_ordinals(query, params.feedback_docs, Strategy::default());
    if first.is_empty() {
        return Ok(None);
    }
    let feedback = first
        .iter()
        .map(|&(ord, _)| index.forward_vector(ord))
        .collect::<Result<Vec<_>>>()?;
    rocchio_expand(query, &feedback, params).map(Some)
}

/// Feedback search for every query, collected into a run.
pub fn batch_prf_search(
    index: &ImpactIndex,
    queries: &[SparseVector],
    k: usize,
    params: &RocchioParams,
    tag: &str,
) -> Result<Run> {
    params.validate()?;
    let mut ids = HashSet::new();
    for q in queries {
        if !ids.insert(q.id()) {
            return Err(Error::DuplicateQuery(q.id().to_string()));
        }
    }
    let lists = queries
        .par_iter()
        .map(|q| prf_search(index, q, k, params).map(|hits| (q.id().to_string(), hits)))
        .collect::<Result<Vec<_>>>()?;
    let mut run = Run::new(tag);
    for (qid, hits) in lists {
        if !hits.is_empty() {
            run.insert_ordered(qid, hits);
        }
    }
    Ok(run)
}
