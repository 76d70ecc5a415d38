//! Declarative run recipes.
//!
//! A recipe is a TOML document holding a `version`, a `name` and an ordered
//! list of `[[stage]]` tables. Each stage names its operation with `op`;
//! stages that produce something carry an `id` that later stages reference.
//! Input paths resolve against the recipe's base directory, output paths
//! against the output directory. The last stage must be `write` or `eval`.
//!
//! ```toml
//! version = 1
//! name = "baseline"
//!
//! [[stage]]
//! op = "index"
//! id = "idx"
//! vectors = "docs.jsonl"
//!
//! [[stage]]
//! op = "search"
//! id = "bm"
//! index = "idx"
//! queries = "queries.jsonl"
//!
//! [[stage]]
//! op = "write"
//! input = "bm"
//! path = "baseline.run"
//! ```

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::doc_pool::{pool_run, PassageMapping, DEFAULT_POOL_DEPTH};
use crate::error::{Error, Result};
use crate::eval::{evaluate_run, MetricSpec, DEFAULT_THRESHOLD};
use crate::fusion::{fuse, FuseOptions, FusionMethod, MissingPolicy, DEFAULT_FUSION_DEPTH};
use crate::pipeline::overlay::{rerank_overlay, ScoreOverlay, DEFAULT_RERANK_DEPTH};
use crate::prf::{batch_prf_search, RocchioParams};
use crate::sparse_index::{collect_queries, ImpactIndex, IndexOptions, DEFAULT_DEPTH};
use crate::trec_io::{parse_doc_mapping, parse_qrels, parse_run, parse_vectors, write_run, Run};

pub const RECIPE_VERSION: u32 = 1;

fn default_depth() -> usize {
    DEFAULT_DEPTH
}
fn default_true() -> bool {
    true
}
fn default_alpha() -> f64 {
    RocchioParams::default().alpha
}
fn default_beta() -> f64 {
    RocchioParams::default().beta
}
fn default_fb_docs() -> usize {
    RocchioParams::default().feedback_docs
}
fn default_fb_terms() -> usize {
    RocchioParams::default().max_terms
}
fn default_fusion_depth() -> usize {
    DEFAULT_FUSION_DEPTH
}
fn default_rerank_depth() -> usize {
    DEFAULT_RERANK_DEPTH
}
fn default_pool_depth() -> usize {
    DEFAULT_POOL_DEPTH
}
fn default_threshold() -> u32 {
    DEFAULT_THRESHOLD
}
fn default_metrics() -> String {
    "ndcg@10,map@1000,mrr@10".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Stage {
    /// Build an index from a vector file.
    Index {
        id: String,
        vectors: PathBuf,
        #[serde(default = "default_true")]
        forward: bool,
    },
    /// Load an index directory written by `cascade index`.
    LoadIndex {
        id: String,
        path: PathBuf,
    },
    Search {
        id: String,
        index: String,
        queries: PathBuf,
        #[serde(default = "default_depth")]
        k: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tag: Option<String>,
    },
    PrfSearch {
        id: String,
        index: String,
        queries: PathBuf,
        #[serde(default = "default_depth")]
        k: usize,
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_beta")]
        beta: f64,
        #[serde(default = "default_fb_docs")]
        fb_docs: usize,
        #[serde(default = "default_fb_terms")]
        fb_terms: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tag: Option<String>,
    },
    LoadRun {
        id: String,
        path: PathBuf,
    },
    Fuse {
        id: String,
        inputs: Vec<String>,
        #[serde(default)]
        method: FusionMethod,
        #[serde(default)]
        missing: MissingPolicy,
        #[serde(default = "default_fusion_depth")]
        depth: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tag: Option<String>,
    },
    Rerank {
        id: String,
        input: String,
        overlay: PathBuf,
        #[serde(default = "default_rerank_depth")]
        depth: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tag: Option<String>,
    },
    Pool {
        id: String,
        input: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mapping: Option<PathBuf>,
        #[serde(default = "default_pool_depth")]
        k: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tag: Option<String>,
    },
    Write {
        input: String,
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tag: Option<String>,
    },
    Eval {
        input: String,
        qrels: PathBuf,
        #[serde(default = "default_metrics")]
        metrics: String,
        #[serde(default = "default_threshold")]
        threshold: u32,
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Index,
    Run,
}

impl Stage {
    pub fn op(&self) -> &'static str {
        match self {
            Stage::Index { .. } => "index",
            Stage::LoadIndex { .. } => "load_index",
            Stage::Search { .. } => "search",
            Stage::PrfSearch { .. } => "prf_search",
            Stage::LoadRun { .. } => "load_run",
            Stage::Fuse { .. } => "fuse",
            Stage::Rerank { .. } => "rerank",
            Stage::Pool { .. } => "pool",
            Stage::Write { .. } => "write",
            Stage::Eval { .. } => "eval",
        }
    }

    /// Id of the value this stage produces, if any.
    pub fn id(&self) -> Option<&str> {
        match self {
            Stage::Index { id, .. }
            | Stage::LoadIndex { id, .. }
            | Stage::Search { id, .. }
            | Stage::PrfSearch { id, .. }
            | Stage::LoadRun { id, .. }
            | Stage::Fuse { id, .. }
            | Stage::Rerank { id, .. }
            | Stage::Pool { id, .. } => Some(id),
            Stage::Write { .. } | Stage::Eval { .. } => None,
        }
    }

    fn produces(&self) -> Option<Kind> {
        match self {
            Stage::Index { .. } | Stage::LoadIndex { .. } => Some(Kind::Index),
            Stage::Write { .. } | Stage::Eval { .. } => None,
            _ => Some(Kind::Run),
        }
    }

    fn references(&self) -> Vec<(&str, Kind)> {
        match self {
            Stage::Search { index, .. } | Stage::PrfSearch { index, .. } => vec![(index, Kind::Index)],
            Stage::Fuse { inputs, .. } => inputs.iter().map(|i| (i.as_str(), Kind::Run)).collect(),
            Stage::Rerank { input, .. }
            | Stage::Pool { input, .. }
            | Stage::Write { input, .. }
            | Stage::Eval { input, .. } => vec![(input, Kind::Run)],
            _ => Vec::new(),
        }
    }

    /// Files (or directories) this stage reads.
    pub fn input_paths(&self) -> Vec<&Path> {
        match self {
            Stage::Index { vectors, .. } => vec![vectors],
            Stage::LoadIndex { path, .. } | Stage::LoadRun { path, .. } => vec![path],
            Stage::Search { queries, .. } | Stage::PrfSearch { queries, .. } => vec![queries],
            Stage::Rerank { overlay, .. } => vec![overlay],
            Stage::Pool { mapping, .. } => mapping.iter().map(PathBuf::as_path).collect(),
            Stage::Eval { qrels, .. } => vec![qrels],
            Stage::Fuse { .. } | Stage::Write { .. } => Vec::new(),
        }
    }

    fn label(&self, position: usize) -> String {
        match self.id() {
            Some(id) => format!("{} {id}", self.op()),
            None => format!("{} #{}", self.op(), position + 1),
        }
    }

    fn check_params(&self) -> Result<()> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(Error::Recipe(format!("{name} must be at least 1")))
            } else {
                Ok(())
            }
        };
        match self {
            Stage::Search { k, .. } => positive("k", *k),
            Stage::PrfSearch {
                k,
                alpha,
                beta,
                fb_docs,
                fb_terms,
                ..
            } => {
                positive("k", *k)?;
                RocchioParams {
                    alpha: *alpha,
                    beta: *beta,
                    feedback_docs: *fb_docs,
                    max_terms: *fb_terms,
                }
                .validate()
            }
            Stage::Fuse { inputs, depth, .. } => {
                if inputs.is_empty() {
                    return Err(Error::Recipe("fuse needs at least one input".into()));
                }
                positive("depth", *depth)
            }
            Stage::Rerank { depth, .. } => positive("depth", *depth),
            Stage::Pool { k, .. } => positive("k", *k),
            Stage::Eval { metrics, threshold, .. } => {
                if *threshold == 0 {
                    return Err(Error::Recipe("threshold must be at least 1".into()));
                }
                if MetricSpec::parse_list(metrics)?.is_empty() {
                    return Err(Error::Recipe("eval needs at least one metric".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recipe {
    pub version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(rename = "stage", default)]
    pub stages: Vec<Stage>,
}

impl Recipe {
    pub fn from_toml(text: &str) -> Result<Self> {
        let recipe: Recipe = toml::from_str(text).map_err(|e| Error::Recipe(e.to_string()))?;
        recipe.validate()?;
        Ok(recipe)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        Self::from_toml(&text).map_err(|e| e.in_file(path))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Recipe(e.to_string()))
    }

    /// Structural checks: version, stage references, parameters and the
    /// terminal sink. File existence is checked by [`Recipe::check_inputs`].
    pub fn validate(&self) -> Result<()> {
        if self.version != RECIPE_VERSION {
            return Err(Error::Recipe(format!(
                "recipe version {} is not supported (expected {RECIPE_VERSION})",
                self.version
            )));
        }
        match self.stages.last() {
            None => return Err(Error::Recipe("recipe has no stages".into())),
            Some(Stage::Write { .. } | Stage::Eval { .. }) => {}
            Some(other) => {
                return Err(Error::Recipe(format!(
                    "recipe must end with a write or eval stage, not {}",
                    other.op()
                )))
            }
        }
        let mut known: HashMap<&str, Kind> = HashMap::new();
        for (i, stage) in self.stages.iter().enumerate() {
            let label = stage.label(i);
            for (name, want) in stage.references() {
                match known.get(name) {
                    Some(&have) if have == want => {}
                    Some(_) => {
                        return Err(Error::Recipe(format!(
                            "{label}: {name:?} is not a {}",
                            if want == Kind::Index { "index" } else { "run" }
                        )))
                    }
                    None => {
                        return Err(Error::Recipe(format!(
                            "{label}: {name:?} is not produced by an earlier stage"
                        )))
                    }
                }
            }
            stage
                .check_params()
                .map_err(|e| Error::Recipe(format!("{label}: {e}")))?;
            if let (Some(id), Some(kind)) = (stage.id(), stage.produces()) {
                if id.is_empty() || known.insert(id, kind).is_some() {
                    return Err(Error::Recipe(format!("{label}: stage id must be unique and non-empty")));
                }
            }
        }
        Ok(())
    }

    /// Every input path the recipe reads, in stage order.
    pub fn input_paths(&self) -> Vec<&Path> {
        self.stages.iter().flat_map(Stage::input_paths).collect()
    }

    /// Fails if any input is missing under `base`.
    pub fn check_inputs(&self, base: &Path) -> Result<()> {
        let missing: Vec<String> = self
            .input_paths()
            .into_iter()
            .map(|p| base.join(p))
            .filter(|p| !p.exists())
            .map(|p| p.display().to_string())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Recipe(format!("missing input(s): {}", missing.join(", "))))
        }
    }
}

#[derive(Debug, Clone)]
pub struct RecipeContext {
    /// Directory that input paths are relative to.
    pub base_dir: PathBuf,
    /// Directory that outputs are written to.
    pub out_dir: PathBuf,
    /// Also write every intermediate run to `out_dir/intermediate/<id>.run`.
    pub keep_intermediates: bool,
    /// Worker threads for per-query parallelism; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl RecipeContext {
    pub fn new(base_dir: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        RecipeContext {
            base_dir: base_dir.into(),
            out_dir: out_dir.into(),
            keep_intermediates: false,
            threads: None,
        }
    }
}

enum Value {
    Index(Arc<ImpactIndex>),
    Run(Run),
}

struct Executor<'a> {
    ctx: &'a RecipeContext,
    values: HashMap<String, Value>,
    written: Vec<PathBuf>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::from(e).in_file(path))
}

impl Executor<'_> {
    fn input(&self, p: &Path) -> PathBuf {
        self.ctx.base_dir.join(p)
    }

    fn index(&self, id: &str) -> Arc<ImpactIndex> {
        match self.values.get(id) {
            Some(Value::Index(idx)) => Arc::clone(idx),
            _ => unreachable!("validated reference {id}"),
        }
    }

    fn run(&self, id: &str) -> &Run {
        match self.values.get(id) {
            Some(Value::Run(run)) => run,
            _ => unreachable!("validated reference {id}"),
        }
    }

    fn create(&mut self, rel: &Path) -> Result<BufWriter<File>> {
        let path = self.ctx.out_dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let file = File::create(&path).map_err(|e| Error::from(e).in_file(&path))?;
        self.written.push(path);
        Ok(BufWriter::new(file))
    }

    fn queries(&self, p: &Path) -> Result<Vec<crate::trec_io::SparseVector>> {
        let path = self.input(p);
        collect_queries(parse_vectors(open(&path)?)).map_err(|e| e.in_file(&path))
    }

    fn execute(&mut self, stage: &Stage) -> Result<()> {
        let value = match stage {
            Stage::Index { vectors, forward, .. } => {
                let path = self.input(vectors);
                let idx = ImpactIndex::build_with(parse_vectors(open(&path)?), IndexOptions { forward: *forward })
                    .map_err(|e| e.in_file(&path))?;
                Value::Index(Arc::new(idx))
            }
            Stage::LoadIndex { path, .. } => Value::Index(Arc::new(ImpactIndex::load(&self.input(path))?)),
            Stage::Search {
                id,
                index,
                queries,
                k,
                tag,
            } => {
                let qs = self.queries(queries)?;
                let idx = self.index(index);
                Value::Run(idx.batch_search(&qs, *k, tag.as_deref().unwrap_or(id))?)
            }
            Stage::PrfSearch {
                id,
                index,
                queries,
                k,
                alpha,
                beta,
                fb_docs,
                fb_terms,
                tag,
            } => {
                let qs = self.queries(queries)?;
                let params = RocchioParams {
                    alpha: *alpha,
                    beta: *beta,
                    feedback_docs: *fb_docs,
                    max_terms: *fb_terms,
                };
                let idx = self.index(index);
                Value::Run(batch_prf_search(&idx, &qs, *k, &params, tag.as_deref().unwrap_or(id))?)
            }
            Stage::LoadRun { path, .. } => {
                let path = self.input(path);
                Value::Run(parse_run(open(&path)?).map_err(|e| e.in_file(&path))?)
            }
            Stage::Fuse {
                id,
                inputs,
                method,
                missing,
                depth,
                tag,
            } => {
                let runs: Vec<Run> = inputs.iter().map(|i| self.run(i).clone()).collect();
                let options = FuseOptions {
                    method: *method,
                    missing: *missing,
                    depth: *depth,
                };
                Value::Run(fuse(&runs, tag.as_deref().unwrap_or(id), &options)?)
            }
            Stage::Rerank {
                id,
                input,
                overlay,
                depth,
                tag,
            } => {
                let path = self.input(overlay);
                let overlay = ScoreOverlay::parse(open(&path)?).map_err(|e| e.in_file(&path))?;
                Value::Run(rerank_overlay(
                    self.run(input),
                    &overlay,
                    *depth,
                    tag.as_deref().unwrap_or(id),
                ))
            }
            Stage::Pool {
                id,
                input,
                mapping,
                k,
                tag,
            } => {
                let mapping = match mapping {
                    Some(p) => {
                        let path = self.input(p);
                        PassageMapping::Explicit(parse_doc_mapping(open(&path)?).map_err(|e| e.in_file(&path))?)
                    }
                    None => PassageMapping::Suffix,
                };
                Value::Run(pool_run(self.run(input), &mapping, tag.as_deref().unwrap_or(id), *k)?)
            }
            Stage::Write { input, path, tag } => {
                let run = match tag {
                    Some(t) => self.run(input).clone().with_tag(t.as_str()),
                    None => self.run(input).clone(),
                };
                let out = self.create(path)?;
                write_run(&run, out)?;
                return Ok(());
            }
            Stage::Eval {
                input,
                qrels,
                metrics,
                threshold,
                path,
            } => {
                let qpath = self.input(qrels);
                let qrels = parse_qrels(open(&qpath)?).map_err(|e| e.in_file(&qpath))?.qrels;
                let specs: Vec<MetricSpec> = MetricSpec::parse_list(metrics)?
                    .into_iter()
                    .map(|m| m.with_threshold(*threshold))
                    .collect();
                let reports = evaluate_run(self.run(input), &qrels, &specs);
                let mut out = self.create(path)?;
                serde_json::to_writer_pretty(&mut out, &reports)?;
                out.write_all(b"\n")?;
                out.flush()?;
                return Ok(());
            }
        };
        let id = stage.id().expect("producing stage has an id").to_string();
        let value = match value {
            Value::Run(run) => Value::Run(as_written(&run)?),
            index => index,
        };
        if let (true, Value::Run(run)) = (self.ctx.keep_intermediates, &value) {
            let out = self.create(&Path::new("intermediate").join(format!("{id}.run")))?;
            write_run(run, out)?;
        }
        self.values.insert(id, value);
        Ok(())
    }
}

/// The run as it reads back from its file form. Stages hand runs to each
/// other this way so a recipe matches the same steps run one file at a time.
fn as_written(run: &Run) -> Result<Run> {
    let mut buf = Vec::new();
    write_run(run, &mut buf)?;
    let back = parse_run(buf.as_slice())?;
    Ok(if back.is_empty() { Run::new(run.tag()) } else { back })
}

/// Validates the recipe and its inputs, then executes every stage in order.
/// Returns the files written. On failure, files written so far are removed.
pub fn run_recipe(recipe: &Recipe, ctx: &RecipeContext) -> Result<Vec<PathBuf>> {
    recipe.validate()?;
    recipe.check_inputs(&ctx.base_dir)?;

    let mut exec = Executor {
        ctx,
        values: HashMap::new(),
        written: Vec::new(),
    };
    let mut go = || -> Result<()> {
        for (i, stage) in recipe.stages.iter().enumerate() {
            log::info!("recipe {}: {}", recipe.name, stage.label(i));
            exec.execute(stage).map_err(|e| Error::Stage {
                stage: stage.label(i),
                source: Box::new(e),
            })?;
        }
        Ok(())
    };
    let result = match ctx.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .install(go),
        None => go(),
    };
    match result {
        Ok(()) => Ok(exec.written),
        Err(e) => {
            for path in &exec.written {
                let _ = fs::remove_file(path);
            }
            Err(e)
        }
    }
}
