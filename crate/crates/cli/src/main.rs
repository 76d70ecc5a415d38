//! `cascade`: sparse retrieval, fusion, reranking and evaluation over
//! TREC-format files.

use std::path::PathBuf;
use std::process::ExitCode;

use cascade_core::fusion::{FusionMethod, MissingPolicy, DEFAULT_FUSION_DEPTH};
use cascade_core::pipeline::DEFAULT_RERANK_DEPTH;
use cascade_core::{doc_pool::DEFAULT_POOL_DEPTH, eval, sparse_index::DEFAULT_DEPTH};
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "cascade", version, about = "Sparse retrieval and run ensembling toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Global {
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for randomized procedures.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write every intermediate run of a recipe under `<out-dir>/intermediate`.
    #[arg(long, global = true)]
    keep_intermediates: bool,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build an impact index from JSONL document vectors.
    Index {
        #[arg(long)]
        vectors: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip forward vectors (disables feedback search on this index).
        #[arg(long)]
        no_forward: bool,
    },
    /// Retrieve the top k documents for each query vector.
    Search(SearchArgs),
    /// Fuse several runs into one.
    Fuse {
        #[arg(long, default_value_t = FusionMethod::AvgNorm)]
        method: FusionMethod,
        #[arg(long, default_value_t = MissingPolicy::Zero)]
        missing: MissingPolicy,
        #[arg(long, default_value_t = DEFAULT_FUSION_DEPTH)]
        depth: usize,
        #[arg(long)]
        tag: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Max-pool a passage run into a document run.
    Pool {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Tab-separated passage to document map (default: strip `#<n>`).
        #[arg(long)]
        mapping: Option<PathBuf>,
        /// Output tag (default: the input run's tag).
        #[arg(long)]
        tag: Option<String>,
        #[arg(short, default_value_t = DEFAULT_POOL_DEPTH)]
        k: usize,
    },
    /// Rescore the head of a run with precomputed reranker scores.
    Rerank {
        #[arg(long)]
        run: PathBuf,
        /// Reranker scores in run format.
        #[arg(long)]
        overlay: PathBuf,
        #[arg(long, default_value_t = DEFAULT_RERANK_DEPTH)]
        depth: usize,
        /// Output tag (default: the input run's tag).
        #[arg(long)]
        tag: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a run against relevance judgments.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long, default_value = "ndcg@10,map@1000,mrr@10")]
        metrics: String,
        /// Minimum grade counted as relevant by MRR and MAP.
        #[arg(long, default_value_t = eval::DEFAULT_THRESHOLD)]
        threshold: u32,
        #[arg(long, value_enum, default_value_t = GainArg::Linear)]
        gain: GainArg,
        /// Print JSON reports instead of a table.
        #[arg(long)]
        json: bool,
        /// Include per-query values in the table.
        #[arg(long)]
        per_query: bool,
    },
    /// Paired randomization test between two runs.
    Sigtest {
        #[arg(long)]
        run_a: PathBuf,
        #[arg(long)]
        run_b: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long, default_value = "ndcg@10")]
        metric: String,
        #[arg(long, default_value_t = eval::DEFAULT_THRESHOLD)]
        threshold: u32,
        /// Sampled sign patterns when there are too many queries to enumerate.
        #[arg(long, default_value_t = eval::DEFAULT_ITERATIONS)]
        iterations: usize,
    },
    /// Run, list or print recipes.
    #[command(subcommand)]
    Recipe(RecipeCommand),
}

#[derive(Args, Debug)]
struct SearchArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(short, default_value_t = DEFAULT_DEPTH)]
    k: usize,
    #[arg(long)]
    tag: String,
    #[arg(long)]
    out: PathBuf,
    /// Expand queries with Rocchio feedback before searching.
    #[arg(long)]
    prf: bool,
    #[arg(long, default_value_t = 1.0)]
    prf_alpha: f64,
    #[arg(long, default_value_t = 0.75)]
    prf_beta: f64,
    /// Feedback documents per query.
    #[arg(long, default_value_t = 10)]
    prf_k: usize,
    /// Terms kept in the expanded query.
    #[arg(long, default_value_t = 128)]
    prf_terms: usize,
}

#[derive(Subcommand, Debug)]
enum RecipeCommand {
    /// Execute a recipe file.
    Run {
        file: PathBuf,
        /// Output directory (default: current directory).
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// List the bundled recipe templates.
    List {
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        #[arg(long)]
        json: bool,
    },
    /// Print a bundled template as TOML.
    Show { name: String },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum GainArg {
    Linear,
    Exponential,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum TaskArg {
    Passage,
    Document,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<cascade_core::Error>() {
        Some(e) if e.is_usage_error() => EXIT_USAGE,
        Some(e) if e.is_data_error() => EXIT_DATA,
        Some(_) => EXIT_INTERNAL,
        None if err.downcast_ref::<commands::UsageError>().is_some() => EXIT_USAGE,
        None if err.downcast_ref::<std::io::Error>().is_some() => EXIT_DATA,
        None => EXIT_INTERNAL,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
