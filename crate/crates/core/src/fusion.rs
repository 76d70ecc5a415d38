//! Run fusion: per-query min-max normalization with score averaging, and
//! Condorcet (pairwise majority, Copeland-scored) aggregation.
//!
//! Both methods are invariant to the order of the input runs: per-document
//! contributions are summed in sorted order, never in run order.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trec_io::{sort_ranked, Run, ScoredDoc};

pub const DEFAULT_FUSION_DEPTH: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMethod {
    #[default]
    AvgNorm,
    Condorcet,
}

/// How `AvgNorm` treats a document that a run did not retrieve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Contributes 0; the divisor is the number of runs.
    #[default]
    Zero,
    /// Ignored; the divisor is the number of runs that retrieved the doc.
    Skip,
}

impl FromStr for FusionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg_norm" => Ok(FusionMethod::AvgNorm),
            "condorcet" => Ok(FusionMethod::Condorcet),
            _ => Err(Error::InvalidArgument(format!(
                "unknown fusion method {s:?} (expected avg_norm or condorcet)"
            ))),
        }
    }
}

impl fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMethod::AvgNorm => "avg_norm",
            FusionMethod::Condorcet => "condorcet",
        })
    }
}

impl FromStr for MissingPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(MissingPolicy::Zero),
            "skip" => Ok(MissingPolicy::Skip),
            _ => Err(Error::InvalidArgument(format!(
                "unknown missing-document policy {s:?} (expected zero or skip)"
            ))),
        }
    }
}

impl fmt::Display for MissingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MissingPolicy::Zero => "zero",
            MissingPolicy::Skip => "skip",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FuseOptions {
    pub method: FusionMethod,
    pub missing: MissingPolicy,
    /// Maximum entries kept per query.
    pub depth: usize,
}

impl Default for FuseOptions {
    fn default() -> Self {
        FuseOptions {
            method: FusionMethod::AvgNorm,
            missing: MissingPolicy::Zero,
            depth: DEFAULT_FUSION_DEPTH,
        }
    }
}

/// Maps each score to `(s - min) / (max - min)` within its query. Lists
/// whose scores are all equal (including single entries) map to 0.5.
/// List order is kept as is.
fn normalize_list(docs: &[ScoredDoc]) -> Vec<ScoredDoc> {
    let (min, max) = docs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
        (lo.min(d.score), hi.max(d.score))
    });
    if docs.is_empty() || max == min {
        return docs.iter().map(|d| ScoredDoc::new(d.doc_id.clone(), 0.5)).collect();
    }
    let range = max - min;
    docs.iter()
        .map(|d| {
            let s = if range.is_finite() {
                (d.score - min) / range
            } else {
                // halve first so the range does not overflow
                (d.score / 2.0 - min / 2.0) / (max / 2.0 - min / 2.0)
            };
            ScoredDoc::new(d.doc_id.clone(), s.clamp(0.0, 1.0))
        })
        .collect()
}

pub fn min_max_normalize(run: &Run) -> Run {
    let mut out = Run::new(run.tag());
    for (qid, docs) in run.queries() {
        out.insert_ordered(qid.to_string(), normalize_list(docs));
    }
    out
}

/// Normalizes every run independently, preserving their order.
pub fn normalize_runs(runs: &[Run]) -> Vec<Run> {
    runs.iter().map(min_max_normalize).collect()
}

fn query_union(runs: &[Run]) -> Vec<&str> {
    let ids: BTreeSet<&str> = runs.iter().flat_map(Run::query_ids).collect();
    ids.into_iter().collect()
}

fn sorted_sum(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    values.iter().sum()
}

fn collect_run(tag: &str, lists: Vec<(String, Vec<ScoredDoc>)>) -> Run {
    let mut run = Run::new(tag);
    for (qid, docs) in lists {
        if !docs.is_empty() {
            run.insert_ordered(qid, docs);
        }
    }
    run
}

/// Averages min-max normalized scores over the union of retrieved docs.
pub fn fuse_avg_norm(runs: &[Run], tag: &str, missing: MissingPolicy, depth: usize) -> Result<Run> {
    if runs.is_empty() {
        return Err(Error::InvalidArgument("fusion needs at least one run".into()));
    }
    let normalized = normalize_runs(runs);
    let queries = query_union(runs);
    let lists = queries
        .par_iter()
        .map(|&qid| {
            let mut contributions: HashMap<&str, Vec<f64>> = HashMap::new();
            for run in &normalized {
                for d in run.query(qid).unwrap_or(&[]) {
                    contributions.entry(&d.doc_id).or_default().push(d.score);
                }
            }
            let mut docs: Vec<ScoredDoc> = contributions
                .into_iter()
                .map(|(doc, mut values)| {
                    let divisor = match missing {
                        MissingPolicy::Zero => normalized.len(),
                        MissingPolicy::Skip => values.len(),
                    };
                    ScoredDoc::new(doc, sorted_sum(&mut values) / divisor as f64)
                })
                .collect();
            sort_ranked(&mut docs);
            docs.truncate(depth);
            (qid.to_string(), docs)
        })
        .collect();
    Ok(collect_run(tag, lists))
}

/// Copeland scores for the candidates of one query.
///
/// `positions[c * voters + v]` is candidate `c`'s 0-based rank in voter
/// `v`'s list, or `u32::MAX` when the voter did not retrieve it. A voter
/// prefers the candidate with the smaller position; two unretrieved
/// candidates tie.
pub fn copeland_scores(positions: &[u32], voters: usize) -> Vec<i64> {
    let n = positions.len().checked_div(voters).unwrap_or(0);
    let mut scores = vec![0i64; n];
    for a in 0..n {
        let pa = &positions[a * voters..(a + 1) * voters];
        for b in a + 1..n {
            let pb = &positions[b * voters..(b + 1) * voters];
            let mut margin = 0i64;
            for (x, y) in pa.iter().zip(pb) {
                margin += (x < y) as i64 - (y < x) as i64;
            }
            match margin.signum() {
                1 => {
                    scores[a] += 1;
                    scores[b] -= 1;
                }
                -1 => {
                    scores[a] -= 1;
                    scores[b] += 1;
                }
                _ => {}
            }
        }
    }
    scores
}

/// Min-max normalized rank credit: 1 for the top of a list, 0 for its
/// bottom, 0.5 for a single-entry list.
fn rank_credit(position: usize, len: usize) -> f64 {
    if len <= 1 {
        0.5
    } else {
        (len - 1 - position) as f64 / (len - 1) as f64
    }
}

/// Rounds a mean credit to a 2^-32 grid so that means which are equal as
/// fractions compare equal after floating-point summation.
fn snap(x: f64) -> f64 {
    const GRID: f64 = (1u64 << 32) as f64;
    (x * GRID).round() / GRID
}

fn condorcet_query(runs: &[Run], qid: &str, depth: usize) -> Vec<ScoredDoc> {
    let candidates: Vec<&str> = runs
        .iter()
        .flat_map(|r| r.query(qid).unwrap_or(&[]).iter().map(|d| d.doc_id.as_str()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let slot: HashMap<&str, usize> = candidates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let voters = runs.len();
    let mut positions = vec![u32::MAX; candidates.len() * voters];
    let mut credits: Vec<Vec<f64>> = vec![Vec::new(); candidates.len()];
    for (v, run) in runs.iter().enumerate() {
        let list = run.query(qid).unwrap_or(&[]);
        for (pos, d) in list.iter().enumerate() {
            let c = slot[d.doc_id.as_str()];
            positions[c * voters + v] = pos as u32;
            credits[c].push(rank_credit(pos, list.len()));
        }
    }
    let copeland = copeland_scores(&positions, voters);
    let (lo, hi) = copeland
        .iter()
        .fold((i64::MAX, i64::MIN), |(lo, hi), &c| (lo.min(c), hi.max(c)));
    // Copeland levels are integers; the mean rank credit (in [0,1]) is
    // folded into the lower half of each level to order ties.
    let span = (hi - lo) as f64 + 0.5;
    let mut docs: Vec<ScoredDoc> = candidates
        .iter()
        .zip(copeland)
        .zip(credits.iter_mut())
        .map(|((doc, c), credit)| {
            let mean = snap(sorted_sum(credit) / voters as f64);
            let level = (c - lo) as f64 + mean / 2.0;
            ScoredDoc::new(*doc, (level / span).clamp(0.0, 1.0))
        })
        .collect();
    sort_ranked(&mut docs);
    docs.truncate(depth);
    docs
}

/// Condorcet fusion ranked by Copeland score (pairwise wins minus losses).
/// Ties in Copeland score are ordered by mean normalized rank credit, then
/// by doc id. Emitted scores lie in [0, 1].
pub fn condorcet_fuse(runs: &[Run], tag: &str, depth: usize) -> Result<Run> {
    if runs.is_empty() {
        return Err(Error::InvalidArgument("fusion needs at least one run".into()));
    }
    let queries = query_union(runs);
    let lists = queries
        .par_iter()
        .map(|&qid| (qid.to_string(), condorcet_query(runs, qid, depth)))
        .collect();
    Ok(collect_run(tag, lists))
}

pub fn fuse(runs: &[Run], tag: &str, options: &FuseOptions) -> Result<Run> {
    match options.method {
        FusionMethod::AvgNorm => fuse_avg_norm(runs, tag, options.missing, options.depth),
        FusionMethod::Condorcet => condorcet_fuse(runs, tag, options.depth),
    }
}
