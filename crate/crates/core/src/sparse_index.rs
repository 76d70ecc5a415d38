//! Immutable impact-ordered inverted index over sparse vectors with exact
//! top-k inner-product search.
//!
//! Document ordinals are assigned in ascending doc-id order, so processing
//! documents by ordinal visits them in the same order the tie-break uses.
//! Scores accumulate in `f64` over query terms in ascending term order,
//! whichever traversal strategy is used, which makes the exhaustive and
//! MaxScore strategies bit-identical.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::trec_io::{Run, ScoredDoc, SparseVector};

/// A retrieved document and its exact inner-product score.
pub type ScoredHit = ScoredDoc;

pub const DEFAULT_DEPTH: usize = 1000;

const INDEX_FILE: &str = "index.bin";
const MAGIC: &[u8; 8] = b"CSCDIMPX";
pub const FORMAT_VERSION: u32 = 1;

/// Upper bounds are compared with this relative slack so that summation
/// order differences can never prune a document that belongs in the top k.
const BOUND_SLACK: f64 = 1.0 + 1e-9;

/// Posting list for one term, ascending by document ordinal.
#[derive(Debug, Clone, PartialEq)]
pub struct PostingList {
    docs: Vec<u32>,
    impacts: Vec<f32>,
    max_impact: f32,
}

impl PostingList {
    fn from_pairs(pairs: Vec<(u32, f32)>) -> Self {
        let (docs, impacts): (Vec<u32>, Vec<f32>) = pairs.into_iter().unzip();
        let max_impact = impacts.iter().copied().fold(0.0f32, f32::max);
        PostingList {
            docs,
            impacts,
            max_impact,
        }
    }

    pub fn docs(&self) -> &[u32] {
        &self.docs
    }

    pub fn impacts(&self) -> &[f32] {
        &self.impacts
    }

    pub fn max_impact(&self) -> f32 {
        self.max_impact
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strategy {
    /// Term-at-a-time accumulation over every posting.
    Exhaustive,
    /// Document-at-a-time with MaxScore upper-bound skipping.
    #[default]
    MaxScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexOptions {
    /// Keep per-document vectors so feedback can read them back.
    pub forward: bool,
}

impl Default for IndexOptions {
    fn default() -> Self {
        IndexOptions { forward: true }
    }
}

/// Flat per-document term lists, used for pseudo-relevance feedback.
#[derive(Debug, Clone, PartialEq)]
struct ForwardStore {
    offsets: Vec<usize>,
    terms: Vec<u32>,
    weights: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpactIndex {
    term_ids: HashMap<String, u32>,
    terms: Vec<String>,
    postings: Vec<PostingList>,
    doc_ids: Vec<String>,
    forward: Option<ForwardStore>,
}

/// Builds an index with forward storage enabled.
pub fn build_index<I>(vectors: I) -> Result<ImpactIndex>
where
    I: IntoIterator<Item = Result<SparseVector>>,
{
    ImpactIndex::build_with(vectors, IndexOptions::default())
}

impl ImpactIndex {
    pub fn build_with<I>(vectors: I, options: IndexOptions) -> Result<Self>
    where
        I: IntoIterator<Item = Result<SparseVector>>,
    {
        let mut docs: Vec<SparseVector> = Vec::new();
        let mut seen = HashSet::new();
        for v in vectors {
            let v = v?;
            if !seen.insert(v.id().to_string()) {
                return Err(Error::DuplicateDoc(v.id().to_string()));
            }
            docs.push(v);
        }
        drop(seen);
        docs.sort_unstable_by(|a, b| a.id().cmp(b.id()));

        let mut lists: BTreeMap<&str, Vec<(u32, f32)>> = BTreeMap::new();
        for (ord, doc) in docs.iter().enumerate() {
            for (term, w) in doc.iter() {
                lists.entry(term).or_default().push((ord as u32, w));
            }
        }
        let terms: Vec<String> = lists.keys().map(|t| t.to_string()).collect();
        let postings: Vec<PostingList> = lists.into_values().map(PostingList::from_pairs).collect();
        let doc_ids: Vec<String> = docs.iter().map(|d| d.id().to_string()).collect();

        let mut index = ImpactIndex {
            term_ids: HashMap::new(),
            terms,
            postings,
            doc_ids,
            forward: None,
        };
        index.rebuild_lookup();
        if options.forward {
            index.forward = Some(index.invert());
        }
        log::debug!(
            "indexed {} documents, {} terms, {} postings",
            index.num_docs(),
            index.num_terms(),
            index.num_postings()
        );
        Ok(index)
    }

    fn rebuild_lookup(&mut self) {
        self.term_ids = self
            .terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    /// Rebuilds per-document vectors from the postings. Terms come out in
    /// ascending order because term ids follow term order.
    fn invert(&self) -> ForwardStore {
        let n = self.doc_ids.len();
        let mut counts = vec![0usize; n + 1];
        for list in &self.postings {
            for &d in &list.docs {
                counts[d as usize + 1] += 1;
            }
        }
        for i in 1..=n {
            counts[i] += counts[i - 1];
        }
        let offsets = counts.clone();
        let total = offsets[n];
        let mut terms = vec![0u32; total];
        let mut weights = vec![0f32; total];
        let mut fill = counts;
        for (t, list) in self.postings.iter().enumerate() {
            for (&d, &w) in list.docs.iter().zip(&list.impacts) {
                let slot = &mut fill[d as usize];
                terms[*slot] = t as u32;
                weights[*slot] = w;
                *slot += 1;
            }
        }
        ForwardStore {
            offsets,
            terms,
            weights,
        }
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn num_postings(&self) -> usize {
        self.postings.iter().map(PostingList::len).sum()
    }

    pub fn doc_id(&self, ordinal: u32) -> Option<&str> {
        self.doc_ids.get(ordinal as usize).map(String::as_str)
    }

    pub fn ordinal(&self, doc_id: &str) -> Option<u32> {
        self.doc_ids
            .binary_search_by(|d| d.as_str().cmp(doc_id))
            .ok()
            .map(|i| i as u32)
    }

    pub fn postings(&self, term: &str) -> Option<&PostingList> {
        self.term_ids.get(term).map(|&t| &self.postings[t as usize])
    }

    pub fn has_forward(&self) -> bool {
        self.forward.is_some()
    }

    /// The stored vector of one document.
    pub fn forward_vector(&self, ordinal: u32) -> Result<SparseVector> {
        let fwd = self.forward.as_ref().ok_or(Error::NoForwardVectors)?;
        let ord = ordinal as usize;
        let id = self
            .doc_ids
            .get(ord)
            .ok_or_else(|| Error::InvalidArgument(format!("document ordinal {ordinal} out of range")))?;
        let range = fwd.offsets[ord]..fwd.offsets[ord + 1];
        let weights = fwd.terms[range.clone()]
            .iter()
            .zip(&fwd.weights[range])
            .map(|(&t, &w)| (self.terms[t as usize].clone(), w))
            .collect();
        Ok(SparseVector::from_map_unchecked(id.clone(), weights))
    }

    /// Exact top-k by inner product using the default strategy.
    pub fn search(&self, query: &SparseVector, k: usize) -> Vec<ScoredHit> {
        self.search_with(query, k, Strategy::default())
    }

    pub fn search_with(&self, query: &SparseVector, k: usize, strategy: Strategy) -> Vec<ScoredHit> {
        self.search_ordinals(query, k, strategy)
            .into_iter()
            .map(|(ord, score)| ScoredDoc::new(self.doc_ids[ord as usize].clone(), score))
            .collect()
    }

    pub(crate) fn search_ordinals(&self, query: &SparseVector, k: usize, strategy: Strategy) -> Vec<(u32, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let cursors: Vec<Cursor<'_>> = query
            .iter()
            .filter_map(|(term, w)| {
                let list = &self.postings[*self.term_ids.get(term)? as usize];
                Some(Cursor::new(list, w as f64))
            })
            .collect();
        if cursors.is_empty() {
            return Vec::new();
        }
        match strategy {
            Strategy::Exhaustive => exhaustive(cursors, self.num_docs(), k),
            Strategy::MaxScore => maxscore(cursors, k),
        }
    }

    /// Searches every query (in parallel) and collects the hits into a run.
    /// Queries without hits are omitted.
    pub fn batch_search(&self, queries: &[SparseVector], k: usize, tag: &str) -> Result<Run> {
        let mut ids = HashSet::new();
        for q in queries {
            if !ids.insert(q.id()) {
                return Err(Error::DuplicateQuery(q.id().to_string()));
            }
        }
        let lists: Vec<(String, Vec<ScoredHit>)> = queries
            .par_iter()
            .map(|q| (q.id().to_string(), self.search(q, k)))
            .collect();
        let mut run = Run::new(tag);
        for (qid, hits) in lists {
            if !hits.is_empty() {
                run.insert_ordered(qid, hits);
            }
        }
        Ok(run)
    }

    /// Writes the index into `dir/index.bin`, creating `dir` if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(dir.join(INDEX_FILE))?);
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&[self.forward.is_some() as u8])?;
        write_u64(&mut w, self.doc_ids.len() as u64)?;
        for id in &self.doc_ids {
            write_str(&mut w, id)?;
        }
        write_u64(&mut w, self.terms.len() as u64)?;
        for (term, list) in self.terms.iter().zip(&self.postings) {
            write_str(&mut w, term)?;
            write_u64(&mut w, list.len() as u64)?;
            for d in &list.docs {
                w.write_all(&d.to_le_bytes())?;
            }
            for x in &list.impacts {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(INDEX_FILE);
        let mut r = BufReader::new(File::open(&path).map_err(|e| Error::from(e).in_file(&path))?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::IndexFormat(format!("{} is not an index file", path.display())));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::IndexFormat(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let num_docs = read_len(&mut r)?;
        let mut doc_ids = Vec::with_capacity(num_docs.min(1 << 20));
        for _ in 0..num_docs {
            let id = read_str(&mut r)?;
            if doc_ids.last().is_some_and(|prev: &String| prev.as_str() >= id.as_str()) {
                return Err(Error::IndexFormat("document ids not strictly ascending".into()));
            }
            doc_ids.push(id);
        }
        let num_terms = read_len(&mut r)?;
        let mut terms = Vec::with_capacity(num_terms.min(1 << 20));
        let mut postings = Vec::with_capacity(num_terms.min(1 << 20));
        for _ in 0..num_terms {
            let term = read_str(&mut r)?;
            let len = read_len(&mut r)?;
            if len == 0 {
                return Err(Error::IndexFormat(format!("empty posting list for {term:?}")));
            }
            let mut pairs = Vec::with_capacity(len.min(1 << 20));
            let mut docs = Vec::with_capacity(len.min(1 << 20));
            for _ in 0..len {
                docs.push(read_u32(&mut r)?);
            }
            for d in docs {
                let x = f32::from_le_bytes(read_array(&mut r)?);
                if (d as usize) >= num_docs || pairs.last().is_some_and(|&(p, _)| p >= d) {
                    return Err(Error::IndexFormat(format!("corrupt posting list for {term:?}")));
                }
                if !(x.is_finite() && x > 0.0) {
                    return Err(Error::IndexFormat(format!("invalid impact {x} for {term:?}")));
                }
                pairs.push((d, x));
            }
            terms.push(term);
            postings.push(PostingList::from_pairs(pairs));
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::IndexFormat("trailing bytes after index".into()));
        }
        let mut index = ImpactIndex {
            term_ids: HashMap::new(),
            terms,
            postings,
            doc_ids,
            forward: None,
        };
        index.rebuild_lookup();
        if index.term_ids.len() != index.terms.len() {
            return Err(Error::IndexFormat("duplicate term".into()));
        }
        if flag[0] != 0 {
            index.forward = Some(index.invert());
        }
        Ok(index)
    }
}

fn write_u64<W: Write>(w: &mut W, x: u64) -> std::io::Result<()> {
    w.write_all(&x.to_le_bytes())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|_| Error::IndexFormat("unexpected end of index file".into()))?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_len<R: Read>(r: &mut R) -> Result<usize> {
    let n = u64::from_le_bytes(read_array(r)?);
    usize::try_from(n).map_err(|_| Error::IndexFormat(format!("length {n} too large")))
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)
        .map_err(|_| Error::IndexFormat("unexpected end of index file".into()))?;
    String::from_utf8(buf).map_err(|_| Error::IndexFormat("invalid UTF-8 in index".into()))
}

struct Cursor<'a> {
    list: &'a PostingList,
    weight: f64,
    upper_bound: f64,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(list: &'a PostingList, weight: f64) -> Self {
        Cursor {
            list,
            weight,
            upper_bound: weight * list.max_impact as f64,
            pos: 0,
        }
    }

    #[inline]
    fn doc(&self) -> u32 {
        self.list.docs.get(self.pos).copied().unwrap_or(u32::MAX)
    }

    #[inline]
    fn contribution(&self) -> f64 {
        self.weight * self.list.impacts[self.pos] as f64
    }

    /// Moves to the first posting with ordinal >= `target`.
    fn seek(&mut self, target: u32) {
        let docs = &self.list.docs;
        if self.pos >= docs.len() || docs[self.pos] >= target {
            return;
        }
        // gallop, then binary search inside the bracket
        let mut step = 1;
        let mut lo = self.pos;
        while lo + step < docs.len() && docs[lo + step] < target {
            lo += step;
            step *= 2;
        }
        let hi = (lo + step + 1).min(docs.len());
        self.pos = lo + docs[lo..hi].partition_point(|&d| d < target);
    }
}

fn by_rank(a: &(u32, f64), b: &(u32, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

fn exhaustive(cursors: Vec<Cursor<'_>>, num_docs: usize, k: usize) -> Vec<(u32, f64)> {
    let mut acc = vec![0f64; num_docs];
    let mut touched = Vec::new();
    for c in &cursors {
        for (&d, &x) in c.list.docs.iter().zip(&c.list.impacts) {
            let slot = &mut acc[d as usize];
            if *slot == 0.0 {
                touched.push(d);
            }
            *slot += c.weight * x as f64;
        }
    }
    let mut hits: Vec<(u32, f64)> = touched
        .into_iter()
        .map(|d| (d, acc[d as usize]))
        .filter(|&(_, s)| s > 0.0)
        .collect();
    if hits.len() > k {
        hits.select_nth_unstable_by(k - 1, by_rank);
        hits.truncate(k);
    }
    hits.sort_unstable_by(by_rank);
    hits
}

/// Heap entry ordered so that the worst retained hit sits on top.
#[derive(PartialEq)]
struct Worst(f64, u32);

impl Eq for Worst {}

impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(self.1.cmp(&other.1))
    }
}

impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[inline]
fn may_exceed(bound: f64, threshold: f64) -> bool {
    bound * BOUND_SLACK > threshold
}

fn maxscore(mut cursors: Vec<Cursor<'_>>, k: usize) -> Vec<(u32, f64)> {
    let n = cursors.len();
    // `order` lists cursors by increasing upper bound; `prefix[i]` bounds the
    // score a document can collect from order[0..=i].
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        cursors[a]
            .upper_bound
            .total_cmp(&cursors[b].upper_bound)
            .then(a.cmp(&b))
    });
    let mut prefix = Vec::with_capacity(n);
    let mut running = 0.0;
    for &i in &order {
        running += cursors[i].upper_bound;
        prefix.push(running);
    }

    let mut heap: BinaryHeap<Worst> = BinaryHeap::with_capacity(k + 1);
    let mut contrib: Vec<Option<f64>> = vec![None; n];
    let mut first_essential = 0;

    loop {
        let threshold = (heap.len() >= k).then(|| heap.peek().map_or(f64::NEG_INFINITY, |w| w.0));
        if let Some(th) = threshold {
            while first_essential < n && !may_exceed(prefix[first_essential], th) {
                first_essential += 1;
            }
        }
        if first_essential == n {
            break;
        }
        let doc = order[first_essential..]
            .iter()
            .map(|&i| cursors[i].doc())
            .min()
            .unwrap_or(u32::MAX);
        if doc == u32::MAX {
            break;
        }

        contrib.fill(None);
        let mut partial = 0.0;
        for &i in &order[first_essential..] {
            let c = &mut cursors[i];
            if c.doc() == doc {
                let v = c.contribution();
                contrib[i] = Some(v);
                partial += v;
                c.pos += 1;
            }
        }

        let mut viable = true;
        if let Some(th) = threshold {
            for j in (0..first_essential).rev() {
                if !may_exceed(partial + prefix[j], th) {
                    viable = false;
                    break;
                }
                let i = order[j];
                let c = &mut cursors[i];
                c.seek(doc);
                if c.doc() == doc {
                    let v = c.contribution();
                    contrib[i] = Some(v);
                    partial += v;
                }
            }
        }
        if !viable {
            continue;
        }

        // exact score, summed in query-term order
        let score = contrib.iter().flatten().fold(0.0, |s, v| s + v);
        if score <= 0.0 {
            continue;
        }
        if heap.len() < k {
            heap.push(Worst(score, doc));
        } else if heap.peek().is_some_and(|w| score > w.0) {
            // Later ordinals lose ties, so only a strictly higher score enters.
            heap.pop();
            heap.push(Worst(score, doc));
        }
    }

    let mut hits: Vec<(u32, f64)> = heap.into_iter().map(|w| (w.1, w.0)).collect();
    hits.sort_unstable_by(by_rank);
    hits
}

/// Convenience for callers holding vectors rather than results.
pub fn build_index_from(vectors: impl IntoIterator<Item = SparseVector>) -> Result<ImpactIndex> {
    build_index(vectors.into_iter().map(Ok))
}

/// Loads queries into a vector, checking for duplicate ids.
pub fn collect_queries<I>(vectors: I) -> Result<Vec<SparseVector>>
where
    I: IntoIterator<Item = Result<SparseVector>>,
{
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for v in vectors {
        let v = v?;
        if !seen.insert(v.id().to_string()) {
            return Err(Error::DuplicateQuery(v.id().to_string()));
        }
        out.push(v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::Strategy;
    use super::*;
    use proptest::prelude::*;
    use proptest::strategy::Strategy as _;

    fn vec_of(id: &str, terms: &[(&str, f32)]) -> SparseVector {
        SparseVector::new(id, terms.iter().map(|&(t, w)| (t, w))).unwrap()
    }

    fn toy() -> ImpactIndex {
        build_index_from([vec_of("d1", &[("a", 2.0)]), vec_of("d2", &[("a", 1.0), ("b", 3.0)])]).unwrap()
    }

    #[test]
    fn builds_postings() {
        let idx = toy();
        let a = idx.postings("a").unwrap();
        assert_eq!(a.docs(), &[0, 1]);
        assert_eq!(a.impacts(), &[2.0, 1.0]);
        assert_eq!(a.max_impact(), 2.0);
        let b = idx.postings("b").unwrap();
        assert_eq!(b.docs(), &[1]);
        assert_eq!(b.max_impact(), 3.0);
        assert_eq!(idx.doc_id(0), Some("d1"));
        assert_eq!(idx.num_docs(), 2);
    }

    #[test]
    fn empty_collection() {
        let idx = build_index_from([]).unwrap();
        assert_eq!(idx.num_docs(), 0);
        assert!(idx.search(&vec_of("q", &[("a", 1.0)]), 10).is_empty());
    }

    #[test]
    fn duplicate_doc_rejected() {
        let err = build_index_from([vec_of("d1", &[("a", 1.0)]), vec_of("d1", &[("b", 1.0)])]).unwrap_err();
        assert!(matches!(err, Error::DuplicateDoc(id) if id == "d1"));
    }

    #[test]
    fn empty_docs_count_but_never_match() {
        let idx = build_index_from([vec_of("d0", &[]), vec_of("d1", &[("a", 1.0)])]).unwrap();
        assert_eq!(idx.num_docs(), 2);
        let hits = idx.search(&vec_of("q", &[("a", 1.0)]), 10);
        assert_eq!(hits, vec![ScoredDoc::new("d1", 1.0)]);
        assert!(idx.forward_vector(0).unwrap().is_empty());
    }

    #[test]
    fn search_example() {
        let idx = toy();
        let q = vec_of("q", &[("a", 1.0), ("b", 1.0)]);
        for strategy in [Strategy::Exhaustive, Strategy::MaxScore] {
            let hits = idx.search_with(&q, 2, strategy);
            assert_eq!(hits, vec![ScoredDoc::new("d2", 4.0), ScoredDoc::new("d1", 2.0)]);
        }
        assert!(idx.search(&vec_of("q", &[("z", 5.0)]), 3).is_empty());
        assert_eq!(idx.search(&q, 10).len(), 2);
    }

    #[test]
    fn ties_break_by_doc_id() {
        let idx = build_index_from([
            vec_of("c", &[("a", 1.0)]),
            vec_of("b", &[("a", 1.0)]),
            vec_of("a", &[("a", 1.0)]),
        ])
        .unwrap();
        let q = vec_of("q", &[("a", 1.0)]);
        for strategy in [Strategy::Exhaustive, Strategy::MaxScore] {
            let ids: Vec<_> = idx.search_with(&q, 2, strategy).into_iter().map(|h| h.doc_id).collect();
            assert_eq!(ids, ["a", "b"]);
        }
    }

    #[test]
    fn forward_vectors_round_trip() {
        let docs = [vec_of("x", &[("b", 0.5), ("a", 1.5)]), vec_of("y", &[("c", 2.0)])];
        let idx = build_index_from(docs.clone()).unwrap();
        for d in &docs {
            assert_eq!(&idx.forward_vector(idx.ordinal(d.id()).unwrap()).unwrap(), d);
        }
        let bare = ImpactIndex::build_with(docs.into_iter().map(Ok), IndexOptions { forward: false }).unwrap();
        assert!(matches!(bare.forward_vector(0), Err(Error::NoForwardVectors)));
    }

    #[test]
    fn batch_search_rejects_duplicates() {
        let idx = toy();
        let q = vec_of("q", &[("a", 1.0)]);
        assert!(matches!(
            idx.batch_search(&[q.clone(), q], 5, "t"),
            Err(Error::DuplicateQuery(_))
        ));
        assert!(idx.batch_search(&[], 5, "t").unwrap().is_empty());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let idx = toy();
        idx.save(dir.path()).unwrap();
        assert_eq!(ImpactIndex::load(dir.path()).unwrap(), idx);

        // bump the version field
        let path = dir.path().join(INDEX_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes[8] = 99;
        fs::write(&path, &bytes).unwrap();
        let err = ImpactIndex::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("version 99"), "{err}");

        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(ImpactIndex::load(dir.path()), Err(Error::IndexFormat(_))));
    }

    fn arb_collection() -> impl proptest::strategy::Strategy<Value = (Vec<SparseVector>, SparseVector)> {
        let weights = prop::collection::btree_map(0u8..12, 1u32..40, 0..6);
        let docs = prop::collection::vec(weights.clone(), 0..40);
        let query = prop::collection::btree_map(0u8..12, 1u32..10, 1..6);
        (docs, query).prop_map(|(docs, q)| {
            let docs = docs
                .into_iter()
                .enumerate()
                .map(|(i, w)| {
                    SparseVector::new(
                        format!("d{i:02}"),
                        w.into_iter().map(|(t, x)| (format!("t{t}"), x as f32 / 8.0)),
                    )
                    .unwrap()
                })
                .collect();
            let q = SparseVector::new("q", q.into_iter().map(|(t, x)| (format!("t{t}"), x as f32 / 4.0))).unwrap();
            (docs, q)
        })
    }

    proptest! {
        #[test]
        fn maxscore_matches_exhaustive((docs, q) in arb_collection(), k in 1usize..12) {
            let idx = build_index_from(docs).unwrap();
            prop_assert_eq!(
                idx.search_with(&q, k, Strategy::MaxScore),
                idx.search_with(&q, k, Strategy::Exhaustive)
            );
        }

        #[test]
        fn larger_k_extends_prefix((docs, q) in arb_collection(), k in 1usize..10) {
            let idx = build_index_from(docs).unwrap();
            let small = idx.search(&q, k);
            let large = idx.search(&q, k + 5);
            prop_assert_eq!(&large[..small.len()], &small[..]);
        }

        #[test]
        fn disjoint_queries_add((docs, q) in arb_collection()) {
            let idx = build_index_from(docs).unwrap();
            let (left, right): (Vec<_>, Vec<_>) = q.iter().enumerate().partition(|(i, _)| i % 2 == 0);
            let left = SparseVector::new("l", left.into_iter().map(|(_, (t, w))| (t, w))).unwrap();
            let right = SparseVector::new("r", right.into_iter().map(|(_, (t, w))| (t, w))).unwrap();
            let all = idx.num_docs().max(1);
            let score = |v: &SparseVector| -> HashMap<String, f64> {
                idx.search(v, all).into_iter().map(|h| (h.doc_id, h.score)).collect()
            };
            let (l, r, b) = (score(&left), score(&right), score(&q));
            for (doc, s) in &b {
                let expected = l.get(doc).copied().unwrap_or(0.0) + r.get(doc).copied().unwrap_or(0.0);
                prop_assert!((s - expected).abs() <= 1e-9 * s.abs().max(1.0));
            }
        }
    }
}
