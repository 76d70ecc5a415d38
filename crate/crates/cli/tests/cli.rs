use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cascade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cascade"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = cascade(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn toy() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn recipe_equals_manual_subcommands() {
    let toy = toy();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let recipe_out = d.join("recipe");
    ok(&[
        "--keep-intermediates",
        "recipe",
        "run",
        s(&toy.join("recipe.toml")),
        "--out-dir",
        s(&recipe_out),
    ]);

    let manual = d.join("manual");
    for model in ["edistil", "sdistil"] {
        let index = manual.join(format!("{model}_index"));
        ok(&[
            "index",
            "--vectors",
            s(&toy.join(model).join("docs.jsonl")),
            "--out",
            s(&index),
        ]);
        ok(&[
            "search",
            "--index",
            s(&index),
            "--queries",
            s(&toy.join(model).join("queries.jsonl")),
            "-k",
            "100",
            "--tag",
            model,
            "--out",
            s(&manual.join(format!("{model}.run"))),
            "--prf",
            "--prf-k",
            "5",
            "--prf-terms",
            "32",
        ]);
    }
    let first = manual.join("first_stage.run");
    ok(&[
        "fuse",
        "--method",
        "avg_norm",
        "--depth",
        "100",
        "--tag",
        "first_stage",
        "--out",
        s(&first),
        s(&manual.join("edistil.run")),
        s(&manual.join("sdistil.run")),
    ]);
    let rerankers = ["debertav2", "debertav3", "electra", "t0pp", "albert", "roberta"];
    let mut reranked = Vec::new();
    for r in rerankers {
        let id = format!("rr_{r}");
        let out = manual.join(format!("{id}.run"));
        ok(&[
            "rerank",
            "--run",
            s(&first),
            "--overlay",
            s(&toy.join("rerankers").join(format!("{r}.scores"))),
            "--depth",
            "50",
            "--tag",
            &id,
            "--out",
            s(&out),
        ]);
        reranked.push(out);
    }
    let ensemble = manual.join("ensemble.run");
    let mut args = vec!["fuse", "--tag", "ensemble", "--out", s(&ensemble)];
    args.extend(reranked.iter().map(|p| s(p)));
    ok(&args);
    let documents = manual.join("documents.run");
    ok(&[
        "pool",
        "--run",
        s(&ensemble),
        "-k",
        "100",
        "--tag",
        "documents",
        "--out",
        s(&documents),
    ]);

    let intermediate = recipe_out.join("intermediate");
    for id in ["edistil", "sdistil", "first_stage", "rr_t0pp", "ensemble", "documents"] {
        let a = fs::read(intermediate.join(format!("{id}.run"))).unwrap();
        let b = fs::read(manual.join(format!("{id}.run"))).unwrap();
        assert!(a == b, "{id} differs between recipe and manual execution");
    }

    let final_run = manual.join("toy.run");
    ok(&[
        "pool",
        "--run",
        s(&ensemble),
        "-k",
        "100",
        "--tag",
        "toy_ensemble",
        "--out",
        s(&final_run),
    ]);
    assert_eq!(
        fs::read(recipe_out.join("toy.run")).unwrap(),
        fs::read(&final_run).unwrap()
    );

    let eval = ok(&[
        "eval",
        "--run",
        s(&documents),
        "--qrels",
        s(&toy.join("qrels.txt")),
        "--metrics",
        "ndcg@10,map@100,mrr@10",
        "--json",
    ]);
    assert_eq!(eval.stdout, fs::read(recipe_out.join("toy.eval.json")).unwrap());
}

#[test]
fn exit_codes() {
    assert_eq!(cascade(&["--help"]).status.code(), Some(0));
    assert_eq!(cascade(&["--version"]).status.code(), Some(0));
    assert_eq!(cascade(&[]).status.code(), Some(1));
    assert_eq!(
        cascade(&["fuse", "--method", "borda", "--tag", "t", "--out", "x", "a"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(cascade(&["recipe", "show", "NO_SUCH_RECIPE"]).status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = d.join("missing.run");
    let out = d.join("out.run");
    let r = cascade(&["pool", "--run", s(&missing), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("missing.run"));

    let bad = d.join("bad.run");
    fs::write(&bad, "q1 Q0 d1 1 0.5 t\nq1 Q0 d2 2 nan t\n").unwrap();
    let r = cascade(&["pool", "--run", s(&bad), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("line 2"));
    assert!(!out.exists());

    let run = d.join("a.run");
    fs::write(&run, "q1 Q0 d1 1 0.5 t\n").unwrap();
    let qrels = d.join("qrels");
    fs::write(&qrels, "q1 0 d1 2\n").unwrap();
    let r = cascade(&["sigtest", "--run-a", s(&run), "--run-b", s(&run), "--qrels", s(&qrels)]);
    assert_eq!(r.status.code(), Some(1));
    let r = cascade(&["--threads", "0", "pool", "--run", s(&run), "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(1));
}

#[test]
fn recipe_with_missing_input_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let recipe = dir.path().join("r.toml");
    fs::write(
        &recipe,
        "version = 1\nname = \"r\"\n\n[[stage]]\nop = \"load_run\"\nid = \"a\"\npath = \"nope.run\"\n\n\
         [[stage]]\nop = \"write\"\ninput = \"a\"\npath = \"out.run\"\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let r = cascade(&["recipe", "run", s(&recipe), "--out-dir", s(&out_dir)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("nope.run"));
    assert!(!out_dir.exists());
}

#[test]
fn fuse_pool_rerank_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let a = d.join("a.run");
    let b = d.join("b.run");
    fs::write(&a, "q1 Q0 D1#0 1 3.0 a\nq1 Q0 D1#1 2 2.0 a\nq1 Q0 D2#0 3 1.0 a\n").unwrap();
    fs::write(&b, "q1 Q0 D2#0 1 10.0 b\nq1 Q0 D1#0 2 0.0 b\n").unwrap();
    let fused = d.join("fused.run");
    ok(&[
        "fuse",
        "--missing",
        "skip",
        "--tag",
        "f",
        "--out",
        s(&fused),
        s(&a),
        s(&b),
    ]);
    assert_eq!(
        fs::read_to_string(&fused).unwrap(),
        "q1 Q0 D1#0 1 0.500000 f\nq1 Q0 D1#1 2 0.500000 f\nq1 Q0 D2#0 3 0.500000 f\n"
    );

    let pooled = d.join("pooled.run");
    ok(&["pool", "--run", s(&a), "--out", s(&pooled)]);
    assert_eq!(
        fs::read_to_string(&pooled).unwrap(),
        "q1 Q0 D1 1 3.000000 a\nq1 Q0 D2 2 1.000000 a\n"
    );

    let overlay = d.join("overlay");
    fs::write(&overlay, "q1 Q0 D2#0 0 9.0 rr\nq1 Q0 D1#1 0 8.0 rr\n").unwrap();
    let reranked = d.join("rr.run");
    ok(&[
        "rerank",
        "--run",
        s(&a),
        "--overlay",
        s(&overlay),
        "--depth",
        "3",
        "--out",
        s(&reranked),
    ]);
    assert_eq!(
        fs::read_to_string(&reranked).unwrap(),
        "q1 Q0 D2#0 1 9.000000 a\nq1 Q0 D1#1 2 8.000000 a\n"
    );
}

#[test]
fn eval_and_sigtest_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let a = d.join("a.run");
    let b = d.join("b.run");
    fs::write(&a, "q1 Q0 d1 1 2 a\nq1 Q0 d2 2 1 a\nq2 Q0 d3 1 1 a\n").unwrap();
    fs::write(&b, "q1 Q0 d2 1 2 b\nq1 Q0 d1 2 1 b\nq2 Q0 d4 1 1 b\n").unwrap();
    let qrels = d.join("qrels");
    fs::write(&qrels, "q1 0 d1 2\nq2 0 d3 3\n").unwrap();

    let out = ok(&[
        "eval",
        "--run",
        s(&a),
        "--qrels",
        s(&qrels),
        "--metrics",
        "mrr@10,ndcg@10",
    ]);
    assert_eq!(
        String::from_utf8(out.stdout).unwrap(),
        "a\tmrr@10\tall\t100.00\na\tndcg@10\tall\t100.00\n"
    );

    let out = ok(&[
        "--seed",
        "3",
        "sigtest",
        "--run-a",
        s(&a),
        "--run-b",
        s(&b),
        "--qrels",
        s(&qrels),
        "--metric",
        "mrr@10",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("a\tmrr@10\t100.00"), "{text}");
    assert!(text.contains("b\tmrr@10\t25.00"), "{text}");
    // diffs {0.5, 1.0}: only the all-positive and all-negative patterns reach 1.5
    assert!(text.contains("p-value\t0.500000\texact\tn=2"), "{text}");
}

#[test]
fn recipe_list_and_show() {
    let out = ok(&["recipe", "list", "--task", "passage", "--json"]);
    let list: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let list = list.as_array().unwrap();
    assert_eq!(list.len(), 16);
    assert!(list.iter().all(|r| !r["slots"].as_array().unwrap().is_empty()));

    let out = ok(&["recipe", "show", "NLE_SPLADE_RR"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("op = \"prf_search\""));
    assert_eq!(text.matches("op = \"rerank\"").count(), 6);
}
