//! Bundled recipe templates: three full-ranking ensembles, three rerank
//! runs and ten first-stage baselines, each for the passage and document
//! tasks. Input paths are placeholders under `inputs/` to be filled in.

use std::fmt;
use std::path::PathBuf;

use serde::Serialize;

use crate::doc_pool::DEFAULT_POOL_DEPTH;
use crate::fusion::{FusionMethod, MissingPolicy, DEFAULT_FUSION_DEPTH};
use crate::pipeline::overlay::DEFAULT_RERANK_DEPTH;
use crate::pipeline::recipe::{Recipe, Stage, RECIPE_VERSION};
use crate::prf::RocchioParams;
use crate::sparse_index::DEFAULT_DEPTH;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Passage,
    Document,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Passage => "passage",
            Task::Document => "document",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecipeSummary {
    pub name: String,
    pub task: Task,
    pub description: String,
    /// Input files the template expects.
    pub slots: Vec<String>,
}

/// Sparse encoders with released checkpoints.
const ENCODERS: [(&str, &str); 4] = [
    ("SPLADE_PP_SDISTIL", "splade_pp_sdistil"),
    ("SPLADE_PP_EDISTIL", "splade_pp_edistil"),
    ("SPLADE_EFFICIENT_V", "splade_efficient_v"),
    ("SPLADE_EFFICIENT_VI-BT", "splade_efficient_vi_bt"),
];

const RERANKERS: [&str; 6] = ["debertav2", "debertav3", "electra", "t0pp", "albert", "roberta"];

struct Builder {
    stages: Vec<Stage>,
}

impl Builder {
    fn new() -> Self {
        Builder { stages: Vec::new() }
    }

    fn index(&mut self, model: &str) -> String {
        let id = format!("{model}_index");
        self.stages.push(Stage::Index {
            id: id.clone(),
            vectors: PathBuf::from(format!("inputs/{model}/docs.jsonl")),
            forward: true,
        });
        id
    }

    fn first_stage(&mut self, model: &str, rocchio: bool) -> String {
        let index = self.index(model);
        let queries = PathBuf::from(format!("inputs/{model}/queries.jsonl"));
        let id = if rocchio {
            format!("{model}_rocchio")
        } else {
            model.to_string()
        };
        let stage = if rocchio {
            let p = RocchioParams::default();
            Stage::PrfSearch {
                id: id.clone(),
                index,
                queries,
                k: DEFAULT_DEPTH,
                alpha: p.alpha,
                beta: p.beta,
                fb_docs: p.feedback_docs,
                fb_terms: p.max_terms,
                tag: None,
            }
        } else {
            Stage::Search {
                id: id.clone(),
                index,
                queries,
                k: DEFAULT_DEPTH,
                tag: None,
            }
        };
        self.stages.push(stage);
        id
    }

    fn load_run(&mut self, id: &str, path: &str) -> String {
        self.stages.push(Stage::LoadRun {
            id: id.to_string(),
            path: PathBuf::from(path),
        });
        id.to_string()
    }

    fn fuse(&mut self, id: &str, inputs: Vec<String>, method: FusionMethod) -> String {
        self.stages.push(Stage::Fuse {
            id: id.to_string(),
            inputs,
            method,
            missing: MissingPolicy::Zero,
            depth: DEFAULT_FUSION_DEPTH,
            tag: None,
        });
        id.to_string()
    }

    fn rerank(&mut self, input: &str, reranker: &str) -> String {
        let id = format!("rr_{reranker}");
        self.stages.push(Stage::Rerank {
            id: id.clone(),
            input: input.to_string(),
            overlay: PathBuf::from(format!("inputs/rerankers/{reranker}.scores")),
            depth: DEFAULT_RERANK_DEPTH,
            tag: None,
        });
        id
    }

    fn rerank_all(&mut self, input: &str) -> Vec<String> {
        RERANKERS.iter().map(|r| self.rerank(input, r)).collect()
    }

    fn finish(mut self, tag: &str, final_id: String, task: Task, description: String) -> Recipe {
        let (input, name) = match task {
            Task::Passage => (final_id, tag.to_string()),
            Task::Document => {
                self.stages.push(Stage::Pool {
                    id: "doc_pool".into(),
                    input: final_id,
                    mapping: None,
                    k: DEFAULT_POOL_DEPTH,
                    tag: None,
                });
                ("doc_pool".to_string(), format!("{tag}.doc"))
            }
        };
        self.stages.push(Stage::Write {
            input,
            path: PathBuf::from(format!("{name}.run")),
            tag: Some(tag.to_string()),
        });
        Recipe {
            version: RECIPE_VERSION,
            name,
            description: Some(description),
            stages: self.stages,
        }
    }
}

fn baselines(task: Task) -> Vec<Recipe> {
    let mut out = Vec::new();
    for rocchio in [false, true] {
        let suffix = if rocchio { "_ROCCHIO" } else { "" };
        let how = if rocchio { " with Rocchio feedback" } else { "" };
        for (tag, model) in ENCODERS {
            let mut b = Builder::new();
            let id = b.first_stage(model, rocchio);
            out.push(b.finish(
                &format!("{tag}{suffix}"),
                id,
                task,
                format!("baseline: {model} sparse retrieval{how}"),
            ));
        }
        let mut b = Builder::new();
        let runs = vec![
            b.first_stage("splade_pp_edistil", rocchio),
            b.first_stage("splade_pp_sdistil", rocchio),
        ];
        let id = b.fuse("ensemble", runs, FusionMethod::AvgNorm);
        out.push(b.finish(
            &format!("SPLADE_ENSEMBLE_PP{suffix}"),
            id,
            task,
            format!("baseline: average normalized score of the two SPLADE++ models{how}"),
        ));
    }
    out
}

/// Tag, extra first-stage runs (id, path) and a description.
type FullRankingVariant = (&'static str, &'static [(&'static str, &'static str)], &'static str);

fn full_ranking(task: Task) -> Vec<Recipe> {
    let variants: [FullRankingVariant; 3] = [
        ("NLE_SPLADE_RR", &[], "SPLADE++ ensemble (Rocchio)"),
        (
            "NLE_SPLADE_CBERT_RR",
            &[("colbertv2", "inputs/colbertv2.run")],
            "SPLADE++ ensemble (Rocchio) + ColBERTv2",
        ),
        (
            "NLE_SPLADE_CBERT_DT5_RR",
            &[("colbertv2", "inputs/colbertv2.run"), ("doct5", "inputs/doct5.run")],
            "SPLADE++ ensemble (Rocchio) + ColBERTv2 + DocT5",
        ),
    ];
    variants
        .into_iter()
        .map(|(tag, extra, first)| {
            let mut b = Builder::new();
            let mut runs = vec![
                b.first_stage("splade_pp_edistil", true),
                b.first_stage("splade_pp_sdistil", true),
            ];
            for (id, path) in extra {
                runs.push(b.load_run(id, path));
            }
            let candidates = b.fuse("first_stage", runs, FusionMethod::AvgNorm);
            let reranked = b.rerank_all(&candidates);
            let id = b.fuse("rerank_ensemble", reranked, FusionMethod::AvgNorm);
            b.finish(
                tag,
                id,
                task,
                format!("full ranking: {first}, reranked by an average-normalized ensemble of 6 rerankers"),
            )
        })
        .collect()
}

fn rerank_runs(task: Task) -> Vec<Recipe> {
    let candidates = "inputs/candidates.run";
    let mut out = Vec::new();
    for (tag, method) in [
        ("NLE_RR_ENSEMBLE_AVG", FusionMethod::AvgNorm),
        ("NLE_RR_ENSEMBLE_CONDORCET", FusionMethod::Condorcet),
    ] {
        let mut b = Builder::new();
        let c = b.load_run("candidates", candidates);
        let reranked = b.rerank_all(&c);
        let id = b.fuse("rerank_ensemble", reranked, method);
        out.push(b.finish(
            tag,
            id,
            task,
            format!("rerank: {method} fusion of 6 rerankers over the provided candidates"),
        ));
    }
    let mut b = Builder::new();
    let c = b.load_run("candidates", candidates);
    let id = b.rerank(&c, "t0pp");
    out.push(b.finish(
        "NLE_RR_T0PP",
        id,
        task,
        "rerank: T0pp reranker over the provided candidates".into(),
    ));
    out
}

fn all(task: Task) -> Vec<Recipe> {
    let mut out = full_ranking(task);
    out.extend(rerank_runs(task));
    out.extend(baselines(task));
    out
}

fn summarize(recipe: &Recipe, task: Task) -> RecipeSummary {
    let mut slots: Vec<String> = Vec::new();
    for p in recipe.input_paths() {
        let s = p.display().to_string();
        if !slots.contains(&s) {
            slots.push(s);
        }
    }
    RecipeSummary {
        name: recipe.name.clone(),
        task,
        description: recipe.description.clone().unwrap_or_default(),
        slots,
    }
}

/// Summaries of the bundled templates for one task, or both when `None`.
pub fn list_recipes(task: Option<Task>) -> Vec<RecipeSummary> {
    let tasks = match task {
        Some(t) => vec![t],
        None => vec![Task::Passage, Task::Document],
    };
    tasks
        .into_iter()
        .flat_map(|t| all(t).into_iter().map(move |r| summarize(&r, t)))
        .collect()
}

/// The bundled template with the given name (document variants end in `.doc`).
pub fn template(name: &str) -> Option<Recipe> {
    [Task::Passage, Task::Document]
        .into_iter()
        .flat_map(all)
        .find(|r| r.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixteen_per_task() {
        let passage = list_recipes(Some(Task::Passage));
        assert_eq!(passage.len(), 16);
        assert_eq!(list_recipes(Some(Task::Document)).len(), 16);
        let names: Vec<_> = passage.iter().map(|s| s.name.as_str()).collect();
        for expected in [
            "NLE_SPLADE_RR",
            "NLE_SPLADE_CBERT_RR",
            "NLE_SPLADE_CBERT_DT5_RR",
            "SPLADE_ENSEMBLE_PP_ROCCHIO",
            "SPLADE_EFFICIENT_VI-BT",
        ] {
            assert!(names.contains(&expected), "{expected}");
        }
        assert_eq!(names.iter().filter(|n| n.ends_with("_ROCCHIO")).count(), 5);
    }

    #[test]
    fn templates_validate_and_round_trip() {
        for summary in list_recipes(None) {
            let recipe = template(&summary.name).unwrap();
            recipe.validate().unwrap();
            assert!(!summary.slots.is_empty(), "{}", summary.name);
            let text = recipe.to_toml().unwrap();
            assert_eq!(Recipe::from_toml(&text).unwrap(), recipe);
        }
    }

    #[test]
    fn official_run_shape() {
        let r = template("NLE_SPLADE_RR").unwrap();
        let ops: Vec<_> = r.stages.iter().map(Stage::op).collect();
        assert_eq!(ops.iter().filter(|&&o| o == "prf_search").count(), 2);
        assert_eq!(ops.iter().filter(|&&o| o == "rerank").count(), 6);
        assert_eq!(ops.iter().filter(|&&o| o == "fuse").count(), 2);
        assert_eq!(ops.last(), Some(&"write"));

        let doc = template("NLE_SPLADE_RR.doc").unwrap();
        let ops: Vec<_> = doc.stages.iter().map(Stage::op).collect();
        assert_eq!(&ops[ops.len() - 2..], ["pool", "write"]);

        let b = template("SPLADE_PP_EDISTIL_ROCCHIO").unwrap();
        let ops: Vec<_> = b.stages.iter().map(Stage::op).collect();
        assert_eq!(ops, ["index", "prf_search", "write"]);
    }
}
