use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use cascade_core::doc_pool::{pool_run, PassageMapping};
use cascade_core::eval::{self, evaluate_run, paired_permutation_test, render_reports, Gain, MetricSpec};
use cascade_core::fusion::{fuse, FuseOptions};
use cascade_core::pipeline::{self, list_recipes, rerank_overlay, run_recipe, Recipe, RecipeContext, ScoreOverlay};
use cascade_core::prf::{batch_prf_search, RocchioParams};
use cascade_core::sparse_index::{collect_queries, ImpactIndex, IndexOptions};
use cascade_core::trec_io::{parse_doc_mapping, parse_qrels, parse_run, parse_vectors, write_run};
use cascade_core::{Error, Qrels, Run};

use crate::{Cli, Command, GainArg, RecipeCommand, SearchArgs, TaskArg};

/// Bad command-line usage detected after argument parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn open(path: &Path) -> Result<BufReader<File>, Error> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::from(e).in_file(path))
}

fn read_run(path: &Path) -> Result<Run> {
    Ok(parse_run(open(path)?).map_err(|e| e.in_file(path))?)
}

fn read_qrels(path: &Path) -> Result<Qrels> {
    let parsed = parse_qrels(open(path)?).map_err(|e| e.in_file(path))?;
    if parsed.clamped > 0 {
        log::warn!("{}: {} negative grades treated as 0", path.display(), parsed.clamped);
    }
    Ok(parsed.qrels)
}

/// Writes a run, removing the file again if writing fails.
fn write_run_file(run: &Run, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let file = File::create(path).map_err(|e| Error::from(e).in_file(path))?;
    let mut out = BufWriter::new(file);
    let result = write_run(run, &mut out)
        .map_err(anyhow::Error::from)
        .and_then(|()| Ok(out.flush()?));
    if result.is_err() {
        let _ = fs::remove_file(path);
    }
    result
}

pub fn dispatch(cli: Cli) -> Result<()> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            bail!(UsageError("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Index {
            vectors,
            out,
            no_forward,
        } => {
            let index = ImpactIndex::build_with(parse_vectors(open(&vectors)?), IndexOptions { forward: !no_forward })
                .map_err(|e| e.in_file(&vectors))?;
            index.save(&out)?;
            log::info!(
                "indexed {} documents, {} terms, {} postings",
                index.num_docs(),
                index.num_terms(),
                index.num_postings()
            );
            Ok(())
        }
        Command::Search(args) => search(args),
        Command::Fuse {
            method,
            missing,
            depth,
            tag,
            out,
            runs,
        } => {
            let runs = runs.iter().map(|p| read_run(p)).collect::<Result<Vec<_>>>()?;
            let fused = fuse(&runs, &tag, &FuseOptions { method, missing, depth })?;
            write_run_file(&fused, &out)
        }
        Command::Pool {
            run,
            out,
            mapping,
            tag,
            k,
        } => {
            let input = read_run(&run)?;
            let mapping = match mapping {
                Some(p) => PassageMapping::Explicit(parse_doc_mapping(open(&p)?).map_err(|e| e.in_file(&p))?),
                None => PassageMapping::Suffix,
            };
            let tag = tag.unwrap_or_else(|| input.tag().to_string());
            write_run_file(&pool_run(&input, &mapping, &tag, k)?, &out)
        }
        Command::Rerank {
            run,
            overlay,
            depth,
            tag,
            out,
        } => {
            let input = read_run(&run)?;
            let scores = ScoreOverlay::parse(open(&overlay)?).map_err(|e| e.in_file(&overlay))?;
            let tag = tag.unwrap_or_else(|| input.tag().to_string());
            write_run_file(&rerank_overlay(&input, &scores, depth, &tag), &out)
        }
        Command::Eval {
            run,
            qrels,
            metrics,
            threshold,
            gain,
            json,
            per_query,
        } => {
            let gain = match gain {
                GainArg::Linear => Gain::Linear,
                GainArg::Exponential => Gain::Exponential,
            };
            let specs: Vec<MetricSpec> = MetricSpec::parse_list(&metrics)?
                .into_iter()
                .map(|m| m.with_threshold(threshold).with_gain(gain))
                .collect();
            let reports = evaluate_run(&read_run(&run)?, &read_qrels(&qrels)?, &specs);
            let mut stdout = io::stdout().lock();
            if json {
                serde_json::to_writer_pretty(&mut stdout, &reports)?;
                writeln!(stdout)?;
            } else {
                stdout.write_all(render_reports(&reports, per_query).as_bytes())?;
            }
            Ok(())
        }
        Command::Sigtest {
            run_a,
            run_b,
            qrels,
            metric,
            threshold,
            iterations,
        } => {
            let Some(seed) = cli.global.seed else {
                bail!(UsageError("sigtest needs --seed".into()));
            };
            let spec = metric.parse::<MetricSpec>()?.with_threshold(threshold);
            let qrels = read_qrels(&qrels)?;
            let a = evaluate_run(&read_run(&run_a)?, &qrels, &[spec]).remove(0);
            let b = evaluate_run(&read_run(&run_b)?, &qrels, &[spec]).remove(0);
            let p = paired_permutation_test(&a.per_query, &b.per_query, iterations, seed)?;
            let mode = if a.evaluated <= eval::EXACT_LIMIT {
                "exact"
            } else {
                "sampled"
            };
            println!("{}\t{}\t{}", a.tag, spec, a.percent());
            println!("{}\t{}\t{}", b.tag, spec, b.percent());
            println!("p-value\t{p:.6}\t{mode}\tn={}", a.evaluated);
            Ok(())
        }
        Command::Recipe(cmd) => recipe(cmd, cli.global.threads, cli.global.keep_intermediates),
    }
}

fn search(args: SearchArgs) -> Result<()> {
    let index = ImpactIndex::load(&args.index).map_err(|e| e.in_file(&args.index))?;
    let queries = collect_queries(parse_vectors(open(&args.queries)?)).map_err(|e| e.in_file(&args.queries))?;
    let run = if args.prf {
        let params = RocchioParams {
            alpha: args.prf_alpha,
            beta: args.prf_beta,
            feedback_docs: args.prf_k,
            max_terms: args.prf_terms,
        };
        batch_prf_search(&index, &queries, args.k, &params, &args.tag)?
    } else {
        index.batch_search(&queries, args.k, &args.tag)?
    };
    write_run_file(&run, &args.out)
}

fn recipe(cmd: RecipeCommand, threads: Option<usize>, keep_intermediates: bool) -> Result<()> {
    match cmd {
        RecipeCommand::Run { file, out_dir } => {
            let recipe = Recipe::load(&file)?;
            let base = file.parent().unwrap_or(Path::new("")).to_path_buf();
            let mut ctx = RecipeContext::new(base, out_dir);
            ctx.keep_intermediates = keep_intermediates;
            ctx.threads = threads;
            for path in run_recipe(&recipe, &ctx)? {
                println!("{}", path.display());
            }
            Ok(())
        }
        RecipeCommand::List { task, json } => {
            let task = task.map(|t| match t {
                TaskArg::Passage => pipeline::Task::Passage,
                TaskArg::Document => pipeline::Task::Document,
            });
            let summaries = list_recipes(task);
            let mut stdout = io::stdout().lock();
            if json {
                serde_json::to_writer_pretty(&mut stdout, &summaries)?;
                writeln!(stdout)?;
            } else {
                for s in &summaries {
                    writeln!(stdout, "{}\t{}\t{}", s.name, s.task, s.description)?;
                    for slot in &s.slots {
                        writeln!(stdout, "\t{slot}")?;
                    }
                }
            }
            Ok(())
        }
        RecipeCommand::Show { name } => match pipeline::template(&name) {
            Some(r) => {
                print!("{}", r.to_toml()?);
                Ok(())
            }
            None => bail!(UsageError(format!("no bundled recipe named {name}"))),
        },
    }
}
