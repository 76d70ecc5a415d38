//! TREC-style effectiveness metrics and paired significance testing.
//!
//! Conventions follow `trec_eval`: nDCG uses linear gain with a
//! `log2(rank + 1)` discount and an ideal list drawn from every judged
//! document; queries without a positive judgment are left out of means.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::ser::Serializer;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::trec_io::{Qrels, Run};

/// Default binarization threshold for MRR and AP.
pub const DEFAULT_THRESHOLD: u32 = 2;
pub const DEFAULT_ITERATIONS: usize = 100_000;
/// Up to this many queries the permutation test enumerates every sign
/// pattern instead of sampling.
pub const EXACT_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricKind {
    Ndcg,
    Mrr,
    Map,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Gain {
    #[default]
    Linear,
    /// `2^grade - 1`
    Exponential,
}

impl Gain {
    fn of(self, grade: u32) -> f64 {
        match self {
            Gain::Linear => grade as f64,
            Gain::Exponential => 2f64.powi(grade as i32) - 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MetricSpec {
    pub kind: MetricKind,
    pub cutoff: usize,
    /// Minimum grade counted as relevant by MRR and AP.
    pub threshold: u32,
    /// Gain used by nDCG.
    pub gain: Gain,
}

impl MetricSpec {
    pub fn new(kind: MetricKind, cutoff: usize) -> Self {
        MetricSpec {
            kind,
            cutoff,
            threshold: DEFAULT_THRESHOLD,
            gain: Gain::Linear,
        }
    }

    pub fn with_threshold(mut self, threshold: u32) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn with_gain(mut self, gain: Gain) -> Self {
        self.gain = gain;
        self
    }

    /// Parses a comma-separated list such as `ndcg@10,map@1000`.
    pub fn parse_list(s: &str) -> Result<Vec<MetricSpec>> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(str::parse)
            .collect()
    }

    /// Value of this metric for one query.
    pub fn score<S: AsRef<str>>(&self, ranking: &[S], grades: &HashMap<String, u32>) -> f64 {
        match self.kind {
            MetricKind::Ndcg => ndcg_at_k(ranking, grades, self.cutoff, self.gain),
            MetricKind::Mrr => mrr_at_k(ranking, grades, self.cutoff, self.threshold),
            MetricKind::Map => average_precision_at_k(ranking, grades, self.cutoff, self.threshold),
        }
    }
}

impl FromStr for MetricSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("bad metric {s:?} (expected e.g. ndcg@10, mrr@10, map@1000)"));
        let (name, cutoff) = s.split_once('@').ok_or_else(bad)?;
        let kind = match name.to_ascii_lowercase().as_str() {
            "ndcg" => MetricKind::Ndcg,
            "mrr" => MetricKind::Mrr,
            "map" | "ap" => MetricKind::Map,
            _ => return Err(bad()),
        };
        let cutoff: usize = cutoff.parse().map_err(|_| bad())?;
        if cutoff == 0 {
            return Err(bad());
        }
        Ok(MetricSpec::new(kind, cutoff))
    }
}

impl fmt::Display for MetricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            MetricKind::Ndcg => "ndcg",
            MetricKind::Mrr => "mrr",
            MetricKind::Map => "map",
        };
        write!(f, "{name}@{}", self.cutoff)
    }
}

impl Serialize for MetricSpec {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

fn grade_of<S: AsRef<str>>(grades: &HashMap<String, u32>, doc: &S) -> u32 {
    grades.get(doc.as_ref()).copied().unwrap_or(0)
}

fn discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

/// Discounted cumulative gain of the first `k` entries of `ranking`.
pub fn dcg_at_k<S: AsRef<str>>(ranking: &[S], grades: &HashMap<String, u32>, k: usize, gain: Gain) -> f64 {
    ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, d)| gain.of(grade_of(grades, d)) / discount(i + 1))
        .sum()
}

/// DCG of the best possible ordering of every judged document, cut at `k`.
pub fn ideal_dcg_at_k(grades: &HashMap<String, u32>, k: usize, gain: Gain) -> f64 {
    let mut sorted: Vec<u32> = grades.values().copied().filter(|&g| g > 0).collect();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    sorted
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| gain.of(g) / discount(i + 1))
        .sum()
}

/// nDCG@k. Returns 0 when no judged document has a positive grade; such
/// queries are excluded by [`evaluate_run`].
pub fn ndcg_at_k<S: AsRef<str>>(ranking: &[S], grades: &HashMap<String, u32>, k: usize, gain: Gain) -> f64 {
    let ideal = ideal_dcg_at_k(grades, k, gain);
    if ideal <= 0.0 {
        return 0.0;
    }
    (dcg_at_k(ranking, grades, k, gain) / ideal).min(1.0)
}

/// Reciprocal rank of the first document within `k` with grade >= `threshold`.
pub fn mrr_at_k<S: AsRef<str>>(ranking: &[S], grades: &HashMap<String, u32>, k: usize, threshold: u32) -> f64 {
    ranking
        .iter()
        .take(k)
        .position(|d| grade_of(grades, d) >= threshold)
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

/// Average precision over the first `k` entries, normalized by the total
/// number of relevant judged documents (not capped at `k`).
pub fn average_precision_at_k<S: AsRef<str>>(
    ranking: &[S],
    grades: &HashMap<String, u32>,
    k: usize,
    threshold: u32,
) -> f64 {
    let relevant = grades.values().filter(|&&g| g >= threshold).count();
    if relevant == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, d) in ranking.iter().take(k).enumerate() {
        if grade_of(grades, d) >= threshold {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / relevant as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub tag: String,
    pub metric: MetricSpec,
    pub mean: f64,
    pub per_query: BTreeMap<String, f64>,
    pub evaluated: usize,
    pub skipped: usize,
}

impl MetricReport {
    /// Mean as a percentage with two decimals, e.g. `59.91`.
    pub fn percent(&self) -> String {
        format_percent(self.mean)
    }
}

pub fn format_percent(value: f64) -> String {
    format!("{:.2}", value * 100.0)
}

/// Evaluates a run against qrels for each metric.
///
/// Queries with at least one judgment of grade >= 1 are evaluated; those
/// absent from the run score 0. Other queries (in the run but not judged,
/// or judged without any positive grade) are counted as skipped.
pub fn evaluate_run(run: &Run, qrels: &Qrels, specs: &[MetricSpec]) -> Vec<MetricReport> {
    let evaluable: Vec<&str> = qrels
        .query_ids()
        .filter(|q| qrels.query(q).is_some_and(|g| g.values().any(|&x| x >= 1)))
        .collect();
    let all: BTreeSet<&str> = qrels.query_ids().chain(run.query_ids()).collect();
    let skipped = all.len() - evaluable.len();

    let rankings: Vec<(&str, Vec<&str>, &HashMap<String, u32>)> = evaluable
        .iter()
        .map(|&q| {
            let ranking = run.query(q).unwrap_or(&[]).iter().map(|d| d.doc_id.as_str()).collect();
            (q, ranking, qrels.query(q).expect("evaluable query is judged"))
        })
        .collect();

    specs
        .iter()
        .map(|spec| {
            let per_query: BTreeMap<String, f64> = rankings
                .par_iter()
                .map(|(q, ranking, grades)| (q.to_string(), spec.score(ranking, grades)))
                .collect();
            let mean = if per_query.is_empty() {
                0.0
            } else {
                per_query.values().sum::<f64>() / per_query.len() as f64
            };
            MetricReport {
                tag: run.tag().to_string(),
                metric: *spec,
                mean,
                evaluated: per_query.len(),
                per_query,
                skipped,
            }
        })
        .collect()
}

/// Tab-separated summary: `tag metric mean%`, optionally followed by the
/// per-query values.
pub fn render_reports(reports: &[MetricReport], per_query: bool) -> String {
    let mut out = String::new();
    for r in reports {
        if per_query {
            for (q, v) in &r.per_query {
                out.push_str(&format!("{}\t{}\t{q}\t{v:.4}\n", r.tag, r.metric));
            }
        }
        out.push_str(&format!("{}\t{}\tall\t{}\n", r.tag, r.metric, r.percent()));
    }
    out
}

/// Two-sided paired randomization test on the mean per-query difference.
///
/// With at most [`EXACT_LIMIT`] queries every sign pattern is enumerated and
/// `p` is the exact fraction reaching the observed magnitude. Otherwise
/// `iterations` sign patterns are drawn from a counter-based generator
/// (one stream per iteration, so the result is independent of thread
/// count) and `p = (hits + 1) / (iterations + 1)`.
pub fn paired_permutation_test(
    a: &BTreeMap<String, f64>,
    b: &BTreeMap<String, f64>,
    iterations: usize,
    seed: u64,
) -> Result<f64> {
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        return Err(Error::InvalidArgument(
            "significance test needs values for the same queries".into(),
        ));
    }
    if iterations == 0 {
        return Err(Error::InvalidArgument("iterations must be at least 1".into()));
    }
    let diffs: Vec<f64> = a.values().zip(b.values()).map(|(x, y)| x - y).collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(1.0);
    }
    // Sums stand in for means: the divisor is the same for every pattern.
    let observed = diffs.iter().sum::<f64>().abs();
    let scale: f64 = diffs.iter().map(|d| d.abs()).sum();
    let cutoff = observed - 1e-12 * scale;
    let signed_sum = |flips: &mut dyn FnMut(usize) -> bool| -> f64 {
        diffs
            .iter()
            .enumerate()
            .map(|(i, d)| if flips(i) { -d } else { *d })
            .sum()
    };

    if n <= EXACT_LIMIT {
        let patterns = 1u64 << n;
        let hits = (0..patterns)
            .into_par_iter()
            .filter(|&mask| signed_sum(&mut |i| mask >> i & 1 == 1).abs() >= cutoff)
            .count();
        return Ok(hits as f64 / patterns as f64);
    }

    let hits = (0..iterations as u64)
        .into_par_iter()
        .filter(|&it| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(it);
            let mut word = 0u64;
            let mut flips = |i: usize| {
                if i.is_multiple_of(64) {
                    word = rng.next_u64();
                }
                word >> (i % 64) & 1 == 1
            };
            signed_sum(&mut flips).abs() >= cutoff
        })
        .count();
    Ok((hits + 1) as f64 / (iterations + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trec_io::ScoredDoc;
    use proptest::prelude::*;

    fn grades(pairs: &[(&str, u32)]) -> HashMap<String, u32> {
        pairs.iter().map(|&(d, g)| (d.to_string(), g)).collect()
    }

    #[test]
    fn ndcg_ideal_is_one() {
        let g = grades(&[("A", 3), ("B", 2), ("C", 0)]);
        assert_eq!(ndcg_at_k(&["A", "B", "C"], &g, 10, Gain::Linear), 1.0);
    }

    #[test]
    fn ndcg_swapped_pair() {
        let g = grades(&[("A", 3), ("B", 2)]);
        let dcg = 2.0 + 3.0 / 3f64.log2();
        let idcg = 3.0 + 2.0 / 3f64.log2();
        let v = ndcg_at_k(&["B", "A"], &g, 10, Gain::Linear);
        assert!((v - dcg / idcg).abs() < 1e-12);
        assert!((v - 0.913_402).abs() < 1e-6, "{v}");
    }

    #[test]
    fn ndcg_empty_ranking() {
        let g = grades(&[("A", 1)]);
        assert_eq!(ndcg_at_k::<&str>(&[], &g, 10, Gain::Linear), 0.0);
    }

    #[test]
    fn ndcg_exponential_gain() {
        let g = grades(&[("A", 3), ("B", 2)]);
        let expected = (3.0 + 7.0 / 3f64.log2()) / (7.0 + 3.0 / 3f64.log2());
        let v = ndcg_at_k(&["B", "A"], &g, 10, Gain::Exponential);
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn mrr_cases() {
        let g = grades(&[("r", 2)]);
        assert_eq!(mrr_at_k(&["r", "x"], &g, 10, 2), 1.0);
        assert_eq!(mrr_at_k(&["a", "b", "c", "r"], &g, 10, 2), 0.25);
        let mut ranking: Vec<String> = (0..10).map(|i| format!("n{i}")).collect();
        ranking.push("r".into());
        assert_eq!(mrr_at_k(&ranking, &g, 10, 2), 0.0);
        assert_eq!(mrr_at_k(&["r"], &g, 10, 3), 0.0);
    }

    #[test]
    fn ap_cases() {
        let g = grades(&[("r1", 2), ("r2", 3), ("n", 1)]);
        assert_eq!(average_precision_at_k(&["r1", "r2", "n"], &g, 100, 2), 1.0);
        let v = average_precision_at_k(&["r1", "n", "r2"], &g, 100, 2);
        assert!((v - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(average_precision_at_k(&["n", "x"], &g, 100, 2), 0.0);
        // the relevant count is not capped by k
        assert_eq!(average_precision_at_k(&["r1", "r2"], &g, 1, 2), 0.5);
    }

    #[test]
    fn ap_can_rise_with_threshold() {
        // Raising the threshold shrinks the relevant set, so AP is not
        // monotone in the threshold the way MRR is.
        let g = grades(&[("b", 2), ("a", 1)]);
        let ranking = ["b", "x1", "x2", "x3", "a"];
        assert!((average_precision_at_k(&ranking, &g, 10, 1) - 0.7).abs() < 1e-12);
        assert_eq!(average_precision_at_k(&ranking, &g, 10, 2), 1.0);
    }

    #[test]
    fn metric_names() {
        let specs = MetricSpec::parse_list("ndcg@10,map@100, map@1000,mrr@10").unwrap();
        let names: Vec<String> = specs.iter().map(ToString::to_string).collect();
        assert_eq!(names, ["ndcg@10", "map@100", "map@1000", "mrr@10"]);
        for bad in ["ndcg", "ndcg@0", "p@10", "map@x"] {
            assert!(bad.parse::<MetricSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn skip_and_missing_rules() {
        let mut qrels = Qrels::new();
        qrels.insert("q1", "a", 2);
        qrels.insert("q2", "b", 1);
        qrels.insert("q3", "c", 0);
        let run = Run::from_lists(
            "r",
            [
                ("q1", vec![ScoredDoc::new("a", 1.0)]),
                ("q4", vec![ScoredDoc::new("z", 1.0)]),
            ],
        )
        .unwrap();
        let reports = evaluate_run(&run, &qrels, &[MetricSpec::new(MetricKind::Ndcg, 10)]);
        let r = &reports[0];
        assert_eq!(r.evaluated, 2);
        assert_eq!(r.skipped, 2);
        assert_eq!(r.per_query["q1"], 1.0);
        assert_eq!(r.per_query["q2"], 0.0);
        assert_eq!(r.mean, 0.5);
        assert_eq!(r.percent(), "50.00");
    }

    #[test]
    fn report_json_shape() {
        let mut qrels = Qrels::new();
        qrels.insert("q1", "a", 2);
        let run = Run::from_lists("r", [("q1", vec![ScoredDoc::new("a", 1.0)])]).unwrap();
        let reports = evaluate_run(&run, &qrels, &["mrr@10".parse().unwrap()]);
        let json = serde_json::to_value(&reports[0]).unwrap();
        assert_eq!(
            json,
            serde_json::json!({
                "tag": "r", "metric": "mrr@10", "mean": 1.0,
                "per_query": {"q1": 1.0}, "evaluated": 1, "skipped": 0
            })
        );
    }

    #[test]
    fn percent_format() {
        assert_eq!(format_percent(0.5991), "59.91");
        assert_eq!(format_percent(1.0), "100.00");
    }

    fn per_query(values: &[f64]) -> BTreeMap<String, f64> {
        values
            .iter()
            .enumerate()
            .map(|(i, v)| (format!("q{i:03}"), *v))
            .collect()
    }

    #[test]
    fn identical_inputs_give_one() {
        let a = per_query(&[0.3, 0.5, 0.9]);
        assert_eq!(paired_permutation_test(&a, &a, 1000, 7).unwrap(), 1.0);
        let big = per_query(&(0..40).map(|i| i as f64 / 40.0).collect::<Vec<_>>());
        assert_eq!(paired_permutation_test(&big, &big, 1000, 7).unwrap(), 1.0);
    }

    #[test]
    fn exact_three_query_case() {
        let a = per_query(&[0.1, 0.2, 0.3]);
        let b = per_query(&[0.0, 0.0, 0.0]);
        assert_eq!(paired_permutation_test(&a, &b, 1, 0).unwrap(), 0.25);
    }

    #[test]
    fn mismatched_queries() {
        let a = per_query(&[0.1, 0.2]);
        let b = per_query(&[0.1]);
        assert!(paired_permutation_test(&a, &b, 10, 0).is_err());
    }

    #[test]
    fn sampled_mode_is_seeded() {
        let a = per_query(&(0..30).map(|i| (i % 7) as f64 / 7.0).collect::<Vec<_>>());
        let b = per_query(&(0..30).map(|i| (i % 5) as f64 / 5.0).collect::<Vec<_>>());
        let p1 = paired_permutation_test(&a, &b, 2000, 42).unwrap();
        let p2 = paired_permutation_test(&a, &b, 2000, 42).unwrap();
        assert_eq!(p1, p2);
        assert!(p1 > 0.0 && p1 <= 1.0);
    }

    proptest! {
        #[test]
        fn metrics_in_unit_interval(
            judged in prop::collection::btree_map(0u8..30, 0u32..4, 0..15),
            ranking in prop::collection::vec(0u8..40, 0..25),
            k in 1usize..30,
        ) {
            let g: HashMap<String, u32> = judged.iter().map(|(d, x)| (format!("d{d}"), *x)).collect();
            let mut seen = std::collections::HashSet::new();
            let ranking: Vec<String> = ranking.into_iter().filter(|d| seen.insert(*d)).map(|d| format!("d{d}")).collect();
            for v in [
                ndcg_at_k(&ranking, &g, k, Gain::Linear),
                ndcg_at_k(&ranking, &g, k, Gain::Exponential),
                mrr_at_k(&ranking, &g, k, 1),
                average_precision_at_k(&ranking, &g, k, 1),
            ] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            for t in 1..3 {
                prop_assert!(mrr_at_k(&ranking, &g, k, t + 1) <= mrr_at_k(&ranking, &g, k, t));
            }
            prop_assert!(dcg_at_k(&ranking, &g, k, Gain::Linear) <= dcg_at_k(&ranking, &g, k + 1, Gain::Linear));
        }

        #[test]
        fn permutation_test_is_symmetric(values in prop::collection::vec((0u32..100, 0u32..100), 1..30), seed in any::<u64>()) {
            let a = per_query(&values.iter().map(|v| v.0 as f64 / 100.0).collect::<Vec<_>>());
            let b = per_query(&values.iter().map(|v| v.1 as f64 / 100.0).collect::<Vec<_>>());
            prop_assert_eq!(
                paired_permutation_test(&a, &b, 300, seed).unwrap(),
                paired_permutation_test(&b, &a, 300, seed).unwrap()
            );
        }
    }
}
