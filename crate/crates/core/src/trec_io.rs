//! Readers and writers for the files exchanged between pipeline stages:
//! TREC run files, qrels, line-delimited JSON sparse vectors and
//! passage to document mappings.
//!
//! All parsers are single-pass and report 1-based line numbers on error.

use std::cmp::Ordering;
use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A document and its score inside one query's ranked list.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

impl ScoredDoc {
    pub fn new(doc_id: impl Into<String>, score: f64) -> Self {
        ScoredDoc {
            doc_id: doc_id.into(),
            score,
        }
    }
}

/// Canonical ranking order: descending score, then ascending doc id.
pub fn ranking_order(a: &ScoredDoc, b: &ScoredDoc) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id))
}

pub(crate) fn sort_ranked(docs: &mut [ScoredDoc]) {
    docs.sort_unstable_by(ranking_order);
}

/// One line of a run file, borrowed from a [`Run`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunEntry<'a> {
    pub query_id: &'a str,
    pub doc_id: &'a str,
    pub rank: usize,
    pub score: f64,
    pub tag: &'a str,
}

/// Per-query ranked lists plus a run tag.
///
/// Lists are kept in canonical order ([`ranking_order`]); ranks are the
/// 1-based positions in those lists. A (query, doc) pair appears at most once.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Run {
    tag: String,
    queries: BTreeMap<String, Vec<ScoredDoc>>,
}

impl Run {
    pub fn new(tag: impl Into<String>) -> Self {
        Run {
            tag: tag.into(),
            queries: BTreeMap::new(),
        }
    }

    /// Builds a run from unsorted per-query lists, validating scores and
    /// uniqueness and sorting each list canonically.
    pub fn from_lists<I, Q>(tag: impl Into<String>, lists: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Q, Vec<ScoredDoc>)>,
        Q: Into<String>,
    {
        let mut run = Run::new(tag);
        for (qid, docs) in lists {
            run.insert_query(qid, docs)?;
        }
        Ok(run)
    }

    /// Adds (or replaces) one query's list. Scores must be finite and doc
    /// ids unique within the list.
    pub fn insert_query(&mut self, query_id: impl Into<String>, mut docs: Vec<ScoredDoc>) -> Result<()> {
        let query_id = query_id.into();
        let mut seen = HashSet::with_capacity(docs.len());
        for d in &docs {
            if !d.score.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite score for ({query_id}, {})",
                    d.doc_id
                )));
            }
            if !seen.insert(d.doc_id.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "document {} listed twice for query {query_id}",
                    d.doc_id
                )));
            }
        }
        sort_ranked(&mut docs);
        self.queries.insert(query_id, docs);
        Ok(())
    }

    /// Inserts a list that the caller guarantees is already valid and in
    /// the intended order.
    pub(crate) fn insert_ordered(&mut self, query_id: String, docs: Vec<ScoredDoc>) {
        debug_assert!(docs.iter().all(|d| d.score.is_finite()));
        self.queries.insert(query_id, docs);
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn set_tag(&mut self, tag: impl Into<String>) {
        self.tag = tag.into();
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.set_tag(tag);
        self
    }

    pub fn query(&self, query_id: &str) -> Option<&[ScoredDoc]> {
        self.queries.get(query_id).map(Vec::as_slice)
    }

    /// Queries in ascending id order.
    pub fn queries(&self) -> impl Iterator<Item = (&str, &[ScoredDoc])> {
        self.queries.iter().map(|(q, d)| (q.as_str(), d.as_slice()))
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.queries.keys().map(String::as_str)
    }

    /// Number of queries.
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn num_entries(&self) -> usize {
        self.queries.values().map(Vec::len).sum()
    }

    pub fn entries(&self) -> impl Iterator<Item = RunEntry<'_>> {
        self.queries.iter().flat_map(move |(q, docs)| {
            docs.iter().enumerate().map(move |(i, d)| RunEntry {
                query_id: q,
                doc_id: &d.doc_id,
                rank: i + 1,
                score: d.score,
                tag: &self.tag,
            })
        })
    }

    /// Keeps at most `depth` entries per query.
    pub fn truncate(&mut self, depth: usize) {
        for docs in self.queries.values_mut() {
            docs.truncate(depth);
        }
    }
}

fn split_fields(line: &str) -> Vec<&str> {
    line.split_whitespace().collect()
}

fn parse_score(line: usize, field: &str) -> Result<f64> {
    let score: f64 = field
        .parse()
        .map_err(|_| Error::parse(line, format!("unparsable score {field:?}")))?;
    if !score.is_finite() {
        return Err(Error::parse(line, format!("non-finite score {field:?}")));
    }
    Ok(score)
}

/// One raw line of a run file.
pub(crate) struct RunLine<'a> {
    pub query_id: &'a str,
    pub doc_id: &'a str,
    pub score: f64,
    pub tag: &'a str,
}

pub(crate) fn parse_run_line(line_no: usize, line: &str) -> Result<Option<RunLine<'_>>> {
    let fields = split_fields(line);
    if fields.is_empty() {
        return Ok(None);
    }
    if fields.len() != 6 {
        return Err(Error::parse(
            line_no,
            format!("expected 6 fields, found {}", fields.len()),
        ));
    }
    if !fields[1].eq_ignore_ascii_case("q0") {
        return Err(Error::parse(
            line_no,
            format!("second field must be Q0, found {:?}", fields[1]),
        ));
    }
    fields[3]
        .parse::<u64>()
        .map_err(|_| Error::parse(line_no, format!("unparsable rank {:?}", fields[3])))?;
    let score = parse_score(line_no, fields[4])?;
    Ok(Some(RunLine {
        query_id: fields[0],
        doc_id: fields[2],
        score,
        tag: fields[5],
    }))
}

/// Parses a run file that may hold several runs, one per distinct tag.
/// Runs are returned in order of each tag's first appearance.
pub fn parse_runs<R: BufRead>(reader: R) -> Result<Vec<Run>> {
    let mut runs: Vec<Run> = Vec::new();
    let mut by_tag: HashMap<String, usize> = HashMap::new();
    let mut seen: Vec<HashSet<(String, String)>> = Vec::new();

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let Some(rec) = parse_run_line(line_no, &line)? else {
            continue;
        };
        let idx = match by_tag.get(rec.tag) {
            Some(&idx) => idx,
            None => {
                by_tag.insert(rec.tag.to_string(), runs.len());
                runs.push(Run::new(rec.tag));
                seen.push(HashSet::new());
                runs.len() - 1
            }
        };
        if !seen[idx].insert((rec.query_id.to_string(), rec.doc_id.to_string())) {
            return Err(Error::Duplicate {
                line: line_no,
                what: format!("({}, {})", rec.query_id, rec.doc_id),
            });
        }
        runs[idx]
            .queries
            .entry(rec.query_id.to_string())
            .or_default()
            .push(ScoredDoc::new(rec.doc_id, rec.score));
    }
    for run in &mut runs {
        for docs in run.queries.values_mut() {
            sort_ranked(docs);
        }
    }
    Ok(runs)
}

/// Parses a single-tag run file. Entries are re-sorted canonically and
/// re-ranked; input order is irrelevant. An empty stream yields an empty
/// run with an empty tag.
pub fn parse_run<R: BufRead>(reader: R) -> Result<Run> {
    let mut runs = parse_runs(reader)?;
    match runs.len() {
        0 => Ok(Run::default()),
        1 => Ok(runs.pop().unwrap()),
        n => Err(Error::InvalidArgument(format!(
            "expected one run tag, found {n}: {}",
            runs.iter().map(Run::tag).collect::<Vec<_>>().join(", ")
        ))),
    }
}

fn check_token(kind: &str, value: &str) -> Result<()> {
    if value.is_empty() || value.chars().any(char::is_whitespace) {
        return Err(Error::InvalidArgument(format!(
            "{kind} {value:?} cannot be written to a run file"
        )));
    }
    Ok(())
}

/// Writes `qid Q0 docid rank score tag` lines, queries in ascending id
/// order, scores with 6 decimals.
pub fn write_run<W: Write>(run: &Run, mut out: W) -> Result<()> {
    check_token("run tag", run.tag())?;
    for (qid, docs) in run.queries() {
        check_token("query id", qid)?;
        for (i, d) in docs.iter().enumerate() {
            check_token("doc id", &d.doc_id)?;
            writeln!(out, "{qid} Q0 {} {} {:.6} {}", d.doc_id, i + 1, d.score, run.tag())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Graded relevance judgments: query id to (doc id to grade).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Qrels {
    judgments: BTreeMap<String, HashMap<String, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a judgment. Returns false if the pair was already judged.
    pub fn insert(&mut self, query_id: impl Into<String>, doc_id: impl Into<String>, grade: u32) -> bool {
        match self.judgments.entry(query_id.into()).or_default().entry(doc_id.into()) {
            std::collections::hash_map::Entry::Occupied(_) => false,
            std::collections::hash_map::Entry::Vacant(v) => {
                v.insert(grade);
                true
            }
        }
    }

    pub fn query(&self, query_id: &str) -> Option<&HashMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> Option<u32> {
        self.judgments.get(query_id)?.get(doc_id).copied()
    }

    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.judgments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }
}

/// Result of [`parse_qrels`]: the judgments and how many negative grades
/// were clamped to zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedQrels {
    pub qrels: Qrels,
    pub clamped: usize,
}

/// Parses `qid iter docid grade` lines. The iteration field is ignored and
/// negative grades are clamped to 0 (and counted).
pub fn parse_qrels<R: BufRead>(reader: R) -> Result<ParsedQrels> {
    let mut parsed = ParsedQrels::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let fields = split_fields(&line);
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 4 {
            return Err(Error::parse(
                line_no,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let grade: i64 = fields[3]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("unparsable grade {:?}", fields[3])))?;
        let grade = if grade < 0 {
            parsed.clamped += 1;
            0
        } else {
            u32::try_from(grade).map_err(|_| Error::parse(line_no, format!("grade {grade} out of range")))?
        };
        if !parsed.qrels.insert(fields[0], fields[2], grade) {
            return Err(Error::Duplicate {
                line: line_no,
                what: format!("({}, {})", fields[0], fields[2]),
            });
        }
    }
    if parsed.clamped > 0 {
        log::warn!("clamped {} negative qrels grade(s) to 0", parsed.clamped);
    }
    Ok(parsed)
}

/// A sparse bag of weighted terms: the interchange form of encoder output.
/// Every stored weight is strictly positive and finite.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    id: String,
    weights: BTreeMap<String, f32>,
}

impl SparseVector {
    /// Builds a vector, dropping zero weights. Negative or non-finite
    /// weights are rejected; a repeated term is an error.
    pub fn new<I, T>(id: impl Into<String>, weights: I) -> Result<Self>
    where
        I: IntoIterator<Item = (T, f32)>,
        T: Into<String>,
    {
        let mut map = BTreeMap::new();
        for (term, w) in weights {
            let term = term.into();
            if !w.is_finite() {
                return Err(Error::InvalidArgument(format!("term {term:?} has non-finite weight")));
            }
            if w < 0.0 {
                return Err(Error::InvalidArgument(format!("term {term:?} has negative weight {w}")));
            }
            match map.entry(term) {
                Entry::Occupied(e) => return Err(Error::InvalidArgument(format!("term {:?} repeated", e.key()))),
                Entry::Vacant(e) => {
                    if w > 0.0 {
                        e.insert(w);
                    }
                }
            }
        }
        Ok(SparseVector {
            id: id.into(),
            weights: map,
        })
    }

    pub(crate) fn from_map_unchecked(id: String, weights: BTreeMap<String, f32>) -> Self {
        debug_assert!(weights.values().all(|w| *w > 0.0 && w.is_finite()));
        SparseVector { id, weights }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn get(&self, term: &str) -> Option<f32> {
        self.weights.get(term).copied()
    }

    /// Terms in ascending order with their weights.
    pub fn iter(&self) -> impl Iterator<Item = (&str, f32)> {
        self.weights.iter().map(|(t, w)| (t.as_str(), *w))
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

#[derive(Deserialize)]
struct VectorRecord {
    id: String,
    vector: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct VectorRecordOut<'a> {
    id: &'a str,
    vector: &'a BTreeMap<String, f32>,
}

/// Lazy reader over line-delimited JSON sparse vectors.
pub struct VectorReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
}

impl<R: BufRead> Iterator for VectorReader<R> {
    type Item = Result<SparseVector>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(parse_vector_line(self.line_no, &line));
        }
    }
}

fn parse_vector_line(line_no: usize, line: &str) -> Result<SparseVector> {
    let rec: VectorRecord =
        serde_json::from_str(line).map_err(|e| Error::parse(line_no, format!("invalid JSON: {e}")))?;
    let mut weights = BTreeMap::new();
    for (term, w) in rec.vector {
        if w < 0.0 {
            return Err(Error::Validation {
                line: line_no,
                message: format!("term {term:?} has negative weight {w}"),
            });
        }
        let w32 = w as f32;
        if !w32.is_finite() {
            return Err(Error::Validation {
                line: line_no,
                message: format!("term {term:?} has weight {w} outside the f32 range"),
            });
        }
        if w32 > 0.0 {
            weights.insert(term, w32);
        }
    }
    Ok(SparseVector::from_map_unchecked(rec.id, weights))
}

/// Streams `{"id": ..., "vector": {term: weight}}` records in file order.
/// Zero weights are dropped; negative weights are a validation error.
pub fn parse_vectors<R: BufRead>(reader: R) -> VectorReader<R> {
    VectorReader {
        lines: reader.lines(),
        line_no: 0,
    }
}

pub fn write_vectors<'a, W, I>(vectors: I, mut out: W) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a SparseVector>,
{
    for v in vectors {
        let rec = VectorRecordOut {
            id: &v.id,
            vector: &v.weights,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Parses `passage_id<TAB>doc_id` lines. Repeating a passage with the same
/// document is harmless; mapping it to a different document is an error.
pub fn parse_doc_mapping<R: BufRead>(reader: R) -> Result<HashMap<String, String>> {
    let mut map = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let (Some(pid), Some(did), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::parse(line_no, "expected passage_id<TAB>doc_id"));
        };
        let (pid, did) = (pid.trim(), did.trim());
        if pid.is_empty() || did.is_empty() {
            return Err(Error::parse(line_no, "empty passage or document id"));
        }
        match map.get(pid) {
            Some(existing) if existing != did => {
                return Err(Error::Duplicate {
                    line: line_no,
                    what: format!("passage {pid} mapped to both {existing} and {did}"),
                })
            }
            Some(_) => {}
            None => {
                map.insert(pid.to_string(), did.to_string());
            }
        }
    }
    Ok(map)
}
