use std::collections::HashMap;
use std::io::BufRead;

use crate::error::{Error, Result};
use crate::trec_io::{parse_run_line, sort_ranked, Run, ScoredDoc};

pub const DEFAULT_RERANK_DEPTH: usize = 1000;

/// Precomputed reranker scores keyed by (query, doc).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreOverlay {
    scores: HashMap<String, HashMap<String, f64>>,
}

impl ScoreOverlay {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query_id: &str, doc_id: &str, score: f64) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "non-finite overlay score for ({query_id}, {doc_id})"
            )));
        }
        let prev = self
            .scores
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), score);
        if prev.is_some() {
            return Err(Error::InvalidArgument(format!(
                "overlay scores ({query_id}, {doc_id}) twice"
            )));
        }
        Ok(())
    }

    /// Reads an overlay from a run-format file. Rank and tag are ignored.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut overlay = ScoreOverlay::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let Some(rec) = parse_run_line(i + 1, &line)? else {
                continue;
            };
            overlay
                .insert(rec.query_id, rec.doc_id, rec.score)
                .map_err(|_| Error::Duplicate {
                    line: i + 1,
                    what: format!("({}, {})", rec.query_id, rec.doc_id),
                })?;
        }
        Ok(overlay)
    }

    pub fn from_run(run: &Run) -> Self {
        let mut overlay = ScoreOverlay::new();
        for (qid, docs) in run.queries() {
            overlay.scores.insert(
                qid.to_string(),
                docs.iter().map(|d| (d.doc_id.clone(), d.score)).collect(),
            );
        }
        overlay
    }

    pub fn score(&self, query_id: &str, doc_id: &str) -> Option<f64> {
        self.scores.get(query_id)?.get(doc_id).copied()
    }

    pub fn num_queries(&self) -> usize {
        self.scores.len()
    }
}

/// Re-scores the top `depth` candidates of each query from the overlay.
///
/// Candidates within depth that the overlay does not score are dropped.
/// Candidates below depth follow in their original order, shifted so the
/// first of them sits one point below the lowest overlaid score. A query
/// with no overlaid candidate passes through unchanged.
pub fn rerank_overlay(candidates: &Run, overlay: &ScoreOverlay, depth: usize, tag: &str) -> Run {
    let mut out = Run::new(tag);
    for (qid, list) in candidates.queries() {
        let cut = depth.min(list.len());
        let mut reranked: Vec<ScoredDoc> = list[..cut]
            .iter()
            .filter_map(|d| {
                overlay
                    .score(qid, &d.doc_id)
                    .map(|s| ScoredDoc::new(d.doc_id.clone(), s))
            })
            .collect();
        if reranked.is_empty() {
            out.insert_ordered(qid.to_string(), list.to_vec());
            continue;
        }
        let floor = reranked.iter().map(|d| d.score).fold(f64::INFINITY, f64::min);
        let tail = &list[cut..];
        if let Some(head) = tail.first() {
            let top = head.score;
            reranked.extend(tail.iter().map(|d| {
                let s = (floor - 1.0) - (top - d.score);
                ScoredDoc::new(d.doc_id.clone(), s.max(f64::MIN))
            }));
        }
        sort_ranked(&mut reranked);
        out.insert_ordered(qid.to_string(), reranked);
    }
    out
}
