//! Multi-stage retrieval toolkit working from serialized model outputs.
//!
//! The crate covers the full cascade: learned-sparse indexing and exact
//! top-k search ([`sparse_index`]), Rocchio pseudo-relevance feedback
//! ([`prf`]), run fusion ([`fusion`]), reranker score overlays and recipes
//! ([`pipeline`]), passage to document max-pooling ([`doc_pool`]) and
//! TREC-style evaluation with paired significance testing ([`eval`]).
//!
//! Everything passes between stages as a [`Run`].

pub mod doc_pool;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod pipeline;
pub mod prf;
pub mod sparse_index;
pub mod trec_io;

pub use error::{Error, Result};
pub use trec_io::{Qrels, Run, RunEntry, ScoredDoc, SparseVector};
