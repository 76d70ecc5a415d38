//! Passage to document max-pooling.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::trec_io::{sort_ranked, Run, ScoredDoc};

pub const DEFAULT_POOL_DEPTH: usize = 1000;

/// How passage ids resolve to document ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum PassageMapping {
    /// `docid#<n>` maps to `docid`; ids without a numeric `#` suffix map to
    /// themselves.
    #[default]
    Suffix,
    Explicit(HashMap<String, String>),
}

/// Strips a trailing `#<digits>` from a passage id.
pub fn strip_passage_suffix(passage_id: &str) -> &str {
    match passage_id.rsplit_once('#') {
        Some((doc, num)) if !doc.is_empty() && !num.is_empty() && num.bytes().all(|b| b.is_ascii_digit()) => doc,
        _ => passage_id,
    }
}

impl PassageMapping {
    pub fn doc_id<'a>(&'a self, passage_id: &'a str) -> Result<&'a str> {
        match self {
            PassageMapping::Suffix => Ok(strip_passage_suffix(passage_id)),
            PassageMapping::Explicit(map) => map
                .get(passage_id)
                .map(String::as_str)
                .ok_or_else(|| Error::UnmappedPassage(passage_id.to_string())),
        }
    }
}

/// Scores each document by the maximum score of its passages and keeps
/// the top `k` documents per query.
pub fn pool_run(run: &Run, mapping: &PassageMapping, tag: &str, k: usize) -> Result<Run> {
    let queries: Vec<(&str, &[ScoredDoc])> = run.queries().collect();
    let lists = queries
        .par_iter()
        .map(|&(qid, passages)| {
            let mut best: HashMap<&str, f64> = HashMap::with_capacity(passages.len());
            for p in passages {
                let doc = mapping.doc_id(&p.doc_id)?;
                best.entry(doc).and_modify(|s| *s = s.max(p.score)).or_insert(p.score);
            }
            let mut docs: Vec<ScoredDoc> = best.into_iter().map(|(d, s)| ScoredDoc::new(d, s)).collect();
            sort_ranked(&mut docs);
            docs.truncate(k);
            Ok((qid.to_string(), docs))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Run::new(tag);
    for (qid, docs) in lists {
        if !docs.is_empty() {
            out.insert_ordered(qid, docs);
        }
    }
    Ok(out)
}
