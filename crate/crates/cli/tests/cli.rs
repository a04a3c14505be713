use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sheetrag_core::chunker::{chunk_workbook, ChunkConfig, ChunkKind};
use sheetrag_core::evalkit::EvalReport;
use sheetrag_core::workbook::ingest_path;

const QUESTION: &str = "What was EMEA revenue, and how does it compare with the group total?";
const TASK: &str = "Summarize \"Revenue\" into a workbook with a SUM total";
const ENV_VARS: [&str; 11] = [
    "SHEETRAG_INDEX",
    "SHEETRAG_CONFIG",
    "SHEETRAG_BACKEND",
    "SHEETRAG_EMBEDDER",
    "SHEETRAG_K",
    "SHEETRAG_RRF_K",
    "SHEETRAG_BUDGET",
    "SHEETRAG_CONCURRENCY",
    "SHEETRAG_API_KEY_ENV",
    "SHEETRAG_CUTOFFS",
    "SHEETRAG_API_KEY",
];

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn script(name: &str) -> String {
    format!("scripted:{}", fixture(&format!("scripts/{name}")).display())
}

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

impl From<Output> for Run {
    fn from(o: Output) -> Self {
        Run {
            code: o.status.code().expect("exited normally"),
            stdout: String::from_utf8(o.stdout).unwrap(),
            stderr: String::from_utf8(o.stderr).unwrap(),
        }
    }
}

fn sheetrag_env(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Run {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sheetrag"));
    cmd.current_dir(dir).args(args);
    for v in ENV_VARS {
        cmd.env_remove(v);
    }
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs").into()
}

fn sheetrag(dir: &Path, args: &[&str]) -> Run {
    sheetrag_env(dir, args, &[])
}

fn toy_index(dir: &Path) -> PathBuf {
    let toy = fixture("toy_ledger.wb.json");
    let r = sheetrag(dir, &["index", toy.to_str().unwrap(), "--out", "idx"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    dir.join("idx")
}

/// Trace lines with the timestamp field zeroed.
fn masked_trace(text: &str) -> Vec<Value> {
    text.lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            v["timestamp_ms"] = Value::from(0);
            v
        })
        .collect()
}

fn bootstrap_k(dir: &Path, trace: &str) -> usize {
    let text = std::fs::read_to_string(dir.join(trace)).unwrap();
    let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(first["tool_call"]["call_id"], "bootstrap");
    first["tool_result"]["chunks"].as_array().unwrap().len()
}

#[test]
fn index_reports_counts_by_kind() {
    let dir = tempfile::tempdir().unwrap();
    let toy = fixture("toy_ledger.wb.json");
    let r = sheetrag(dir.path(), &["index", toy.to_str().unwrap(), "--out", "idx"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let wb = ingest_path(&toy).unwrap();
    let chunks = chunk_workbook(&wb, &ChunkConfig::default()).unwrap();
    assert!(r.stdout.contains("files: 1\n"));
    assert!(r.stdout.contains(&format!("sheets: {}\n", wb.sheets.len())));
    assert!(r.stdout.contains(&format!("chunks: {}\n", chunks.len())));
    for kind in ChunkKind::ALL {
        let n = chunks.iter().filter(|c| c.kind == kind).count();
        assert!(n > 0, "{kind}");
        assert!(r.stdout.contains(&format!("  {kind}: {n}\n")), "{}", r.stdout);
    }
    assert!(dir.path().join("idx/manifest.json").is_file());
}

#[test]
fn index_without_inputs_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let r = sheetrag(dir.path(), &["index", "--out", "idx"]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("no inputs"));
}

#[test]
fn corrupt_input_aborts_unless_keep_going() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("broken.xlsx");
    std::fs::write(&bad, b"not a zip archive").unwrap();
    let good = fixture("toy_ledger.wb.json");
    let args = ["index", bad.to_str().unwrap(), good.to_str().unwrap(), "--out", "idx"];
    let r = sheetrag(dir.path(), &args);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("broken.xlsx"));
    assert!(!dir.path().join("idx").exists());

    let mut keep = args.to_vec();
    keep.push("--keep-going");
    let r = sheetrag(dir.path(), &keep);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("partial index: 1 of 2"), "{}", r.stderr);
    assert!(r.stdout.contains("files: 1\n"));
    let q = sheetrag(
        dir.path(),
        &["--index", "idx", "--backend", &script("query_four_calls.json"), "query", QUESTION],
    );
    assert_eq!(q.code, 0, "{}", q.stderr);
}

#[test]
fn index_walks_directories() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = dir.path().join("inputs");
    std::fs::create_dir_all(inputs.join("nested")).unwrap();
    std::fs::copy(fixture("toy_ledger.wb.json"), inputs.join("toy_ledger.wb.json")).unwrap();
    std::fs::copy(fixture("chart_sheet.xlsx"), inputs.join("nested/chart_sheet.xlsx")).unwrap();
    std::fs::write(inputs.join("notes.txt"), "ignored").unwrap();
    let r = sheetrag(dir.path(), &["index", "inputs", "--out", "idx"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("files: 2\n"));
}

#[test]
fn query_prints_golden_answer_and_sources() {
    let dir = tempfile::tempdir().unwrap();
    toy_index(dir.path());
    let r = sheetrag(
        dir.path(),
        &["--index", "idx", "--backend", &script("query_four_calls.json"), "query", QUESTION],
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    let golden = std::fs::read_to_string(fixture("golden/query_answer.txt")).unwrap();
    assert!(r.stdout.starts_with(&format!("{golden}\n")));
    assert!(r.stdout.contains("  P&L!B2  <- toy_ledger/P&L/row/A2:E2\n"));
    assert!(r.stdout.contains("  Consolidation!B4  <- toy_ledger/Consolidation/row/A4:C4\n"));
    let trace = std::fs::read_to_string(dir.path().join("trace.jsonl")).unwrap();
    let want = std::fs::read_to_string(fixture("golden/query_trace.jsonl")).unwrap();
    assert_eq!(masked_trace(&trace), masked_trace(&want));
}

#[test]
fn query_needs_an_existing_index_and_a_backend() {
    let dir = tempfile::tempdir().unwrap();
    let r = sheetrag(
        dir.path(),
        &["--index", "missing", "--backend", &script("query_four_calls.json"), "query", "q"],
    );
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("missing"));
    toy_index(dir.path());
    let r = sheetrag(dir.path(), &["--index", "idx", "query", "q"]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("no backend"));
    let r = sheetrag(dir.path(), &["--index", "idx", "--backend", "scripted:nope.json", "query", "q"]);
    assert_eq!(r.code, 1);
}

#[test]
fn k_follows_flag_env_file_default_precedence() {
    let dir = tempfile::tempdir().unwrap();
    toy_index(dir.path());
    let backend = script("query_four_calls.json");
    let base = ["--index", "idx", "--backend", backend.as_str(), "query", QUESTION];
    let with = |extra: &[&str], env: &[(&str, &str)], out: &str| {
        let mut args: Vec<&str> = base.to_vec();
        args.extend_from_slice(extra);
        args.extend_from_slice(&["--out", out]);
        let r = sheetrag_env(dir.path(), &args, env);
        assert_eq!(r.code, 0, "{}", r.stderr);
        bootstrap_k(dir.path(), out)
    };
    assert_eq!(with(&[], &[], "t0.jsonl"), 10);
    std::fs::write(dir.path().join("sheetrag.toml"), "k = 5\n").unwrap();
    assert_eq!(with(&[], &[], "t1.jsonl"), 5);
    assert_eq!(with(&[], &[("SHEETRAG_K", "4")], "t2.jsonl"), 4);
    assert_eq!(with(&["--k", "3"], &[("SHEETRAG_K", "4")], "t3.jsonl"), 3);
    std::fs::write(dir.path().join("other.toml"), "k = 6\n").unwrap();
    assert_eq!(with(&["--config", "other.toml"], &[], "t4.jsonl"), 6);
}

#[test]
fn invalid_settings_are_user_errors() {
    let dir = tempfile::tempdir().unwrap();
    toy_index(dir.path());
    let backend = script("query_four_calls.json");
    for bad in [["--k", "0"], ["--k", "many"], ["--budget", "0"], ["--embedder", "telepathy"]] {
        let mut args = vec!["--index", "idx", "--backend", backend.as_str()];
        args.extend_from_slice(&bad);
        args.extend_from_slice(&["query", "q"]);
        assert_eq!(sheetrag(dir.path(), &args).code, 1, "{bad:?}");
    }
    let r = sheetrag(dir.path(), &["--index", "idx", "--embedder", "mock:32", "--backend", &backend, "query", "q"]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("incompatible index"), "{}", r.stderr);
    assert_eq!(sheetrag(dir.path(), &["eval", "qs.json", "--cutoffs", "5,x"]).code, 1);
    std::fs::write(dir.path().join("sheetrag.toml"), "unknown_key = 1\n").unwrap();
    let r = sheetrag(dir.path(), &["--index", "idx", "trace", "x"]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("unknown_key"));
}

fn write_script(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    format!("scripted:{}", p.display())
}

#[test]
fn backend_failure_exits_two_and_budget_exhaustion_zero() {
    let dir = tempfile::tempdir().unwrap();
    toy_index(dir.path());
    let failing = write_script(
        dir.path(),
        "fail.json",
        r#"{"format_version":1,"scripts":[{"steps":[
            {"calls":[{"tool":"search_all","arguments":{"query":"revenue"}}]},
            {"fail":"connection reset"}]}]}"#,
    );
    let r = sheetrag(dir.path(), &["--index", "idx", "--backend", &failing, "query", "q"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("connection reset"));
    assert_eq!(std::fs::read_to_string(dir.path().join("trace.jsonl")).unwrap().lines().count(), 2);

    let looping = write_script(
        dir.path(),
        "loop.json",
        r#"{"format_version":1,"scripts":[{"repeat_last":true,"steps":[
            {"text":"still looking","calls":[{"tool":"search_all","arguments":{"query":"revenue"}}]}]}]}"#,
    );
    let r = sheetrag(dir.path(), &["--index", "idx", "--backend", &looping, "--budget", "3", "query", "q"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stderr.contains("budget of 3"));
    let t = sheetrag(dir.path(), &["trace", "trace.jsonl", "--stats"]);
    assert!(t.stdout.contains("tool_calls=3\n"));
}

#[test]
fn workflow_writes_artifacts_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    toy_index(dir.path());
    let r = sheetrag(
        dir.path(),
        &["--index", "idx", "--backend", &script("workflow_two_subtasks.json"), "workflow", TASK, "summary.xlsx", "--out", "run"],
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    let golden = std::fs::read_to_string(fixture("golden/workflow_answer.txt")).unwrap();
    assert!(r.stdout.starts_with(&format!("{golden}\n")));
    let run = dir.path().join("run");
    assert!(run.join("artifacts/summary.xlsx").is_file());
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    let artifacts: Vec<&str> = manifest["artifacts"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(artifacts.contains(&"artifacts/summary.xlsx"));
    let plan: Value = serde_json::from_str(&std::fs::read_to_string(run.join("plan.json")).unwrap()).unwrap();
    assert!(!plan["exploration"]["hits"].as_array().unwrap().is_empty());
    let log = std::fs::read_to_string(run.join("run.log")).unwrap();
    assert!(log.contains("plan accepted"));
}

#[test]
fn workflow_repair_is_logged() {
    let dir = tempfile::tempdir().unwrap();
    toy_index(dir.path());
    let r = sheetrag(
        dir.path(),
        &["--index", "idx", "--backend", &script("workflow_repair.json"), "workflow", TASK, "summary.xlsx"],
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    let log = std::fs::read_to_string(dir.path().join("run/run.log")).unwrap();
    assert!(log.contains("repaired"));
}

#[test]
fn invalid_plan_dumps_both_responses() {
    let dir = tempfile::tempdir().unwrap();
    toy_index(dir.path());
    let r = sheetrag(
        dir.path(),
        &["--index", "idx", "--backend", &script("workflow_invalid.json"), "workflow", TASK, "out.xlsx"],
    );
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("--- planner response 1 ---\nI cannot produce a plan."));
    assert!(r.stderr.contains("--- planner response 2 ---"));
    assert!(dir.path().join("run/plan_invalid.json").is_file());
}

fn suite_index(dir: &Path) {
    let wb = fixture("vendor_invoices.wb.json");
    let r = sheetrag(dir, &["index", wb.to_str().unwrap(), "--out", "suite"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
}

#[test]
fn eval_reproduces_golden_table() {
    let dir = tempfile::tempdir().unwrap();
    suite_index(dir.path());
    let qs = fixture("retrieval_suite.json");
    let r = sheetrag(
        dir.path(),
        &["--index", "suite", "eval", qs.to_str().unwrap(), "--cutoffs", "5,10", "--out", "report.json"],
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    let golden: EvalReport =
        serde_json::from_str(&std::fs::read_to_string(fixture("retrieval_suite_golden.json")).unwrap()).unwrap();
    assert_eq!(r.stdout, golden.render_table());
    let header = r.stdout.lines().next().unwrap();
    for col in ["nDCG@5", "nDCG@10", "Recall@5", "Recall@10", "MAP@5", "MAP@10"] {
        assert!(header.contains(col), "{header}");
    }
    let written: EvalReport = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    for row in &golden.rows {
        let v = written.value(row.retriever, row.metric, row.k).unwrap();
        assert!((v - row.value).abs() <= 1e-12);
    }
    let one = sheetrag(dir.path(), &["--index", "suite", "eval", qs.to_str().unwrap(), "--cutoffs", "3"]);
    assert_eq!(one.code, 0);
    assert!(one.stdout.lines().next().unwrap().contains("Recall@3"));
    assert!(!one.stdout.contains("@5"));
}

#[test]
fn eval_rejects_unknown_labels() {
    let dir = tempfile::tempdir().unwrap();
    suite_index(dir.path());
    std::fs::write(
        dir.path().join("qs.json"),
        r#"{"format_version":1,"queries":[{"query_id":"q1","query":"x","relevant_chunk_ids":["no/such/chunk"]}]}"#,
    )
    .unwrap();
    let r = sheetrag(dir.path(), &["--index", "suite", "eval", "qs.json"]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("no/such/chunk"));
}

#[test]
fn trace_stats_show_and_empty() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(fixture("golden/query_trace.jsonl"), dir.path().join("t.jsonl")).unwrap();
    let stats = sheetrag(dir.path(), &["trace", "t.jsonl", "--stats"]);
    assert_eq!(stats.code, 0);
    assert!(stats.stdout.starts_with("5 entries\ntool_calls=4\n"), "{}", stats.stdout);
    let show = sheetrag(dir.path(), &["trace", "t.jsonl", "--show", "2"]);
    assert_eq!(show.code, 0);
    assert!(show.stdout.starts_with("entry 2 of 5\nseq: 1\n"));
    assert!(show.stdout.contains("search_rows"));
    assert!(show.stdout.contains("arguments: {\"K\":3,\"query\":\"EMEA revenue\"}"));
    assert!(show.stdout.contains("result: ok=true chunks=3"));
    assert!(show.stdout.contains("[P&L!A2:E2] row toy_ledger/P&L/row/A2:E2"));
    assert_eq!(sheetrag(dir.path(), &["trace", "t.jsonl", "--show", "9"]).code, 1);
    std::fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let empty = sheetrag(dir.path(), &["trace", "empty.jsonl"]);
    assert_eq!(empty.code, 0);
    assert_eq!(empty.stdout, "0 entries\n");
    assert_eq!(sheetrag(dir.path(), &["trace", "missing.jsonl"]).code, 1);
}

#[test]
fn trace_show_lists_image_digests() {
    let dir = tempfile::tempdir().unwrap();
    toy_index(dir.path());
    let images = write_script(
        dir.path(),
        "images.json",
        r#"{"format_version":1,"scripts":[{"steps":[
            {"calls":[{"tool":"search_images","arguments":{"query":"margin chart"}}]},
            {"answer":"done"}]}]}"#,
    );
    let r = sheetrag(dir.path(), &["--index", "idx", "--backend", &images, "query", "charts"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let show = sheetrag(dir.path(), &["trace", "trace.jsonl", "--show", "2"]);
    assert!(show.stdout.contains("image img-margin-chart digest "), "{}", show.stdout);
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn same_modulo_timestamps(a: &Path, b: &Path) {
    let files = files_under(a);
    assert_eq!(files, files_under(b));
    for f in files {
        let (x, y) = (std::fs::read(a.join(&f)).unwrap(), std::fs::read(b.join(&f)).unwrap());
        if f.extension().is_some_and(|e| e == "jsonl") {
            let (x, y) = (String::from_utf8(x).unwrap(), String::from_utf8(y).unwrap());
            assert_eq!(masked_trace(&x), masked_trace(&y), "{}", f.display());
        } else {
            assert_eq!(x, y, "{}", f.display());
        }
    }
}

#[test]
fn reruns_are_identical_modulo_timestamps() {
    let dir = tempfile::tempdir().unwrap();
    let toy = fixture("toy_ledger.wb.json");
    for out in ["a", "b"] {
        assert_eq!(sheetrag(dir.path(), &["index", toy.to_str().unwrap(), "--out", out]).code, 0);
    }
    same_modulo_timestamps(&dir.path().join("a"), &dir.path().join("b"));

    let backend = script("query_four_calls.json");
    let q = |out: &str| sheetrag(dir.path(), &["--index", "a", "--backend", &backend, "query", QUESTION, "--out", out]);
    let (x, y) = (q("q1.jsonl"), q("q2.jsonl"));
    assert_eq!(x.stdout, y.stdout);
    let read = |p: &str| std::fs::read_to_string(dir.path().join(p)).unwrap();
    assert_eq!(masked_trace(&read("q1.jsonl")), masked_trace(&read("q2.jsonl")));

    let wf = script("workflow_two_subtasks.json");
    for out in ["r1", "r2"] {
        let r = sheetrag(dir.path(), &["--index", "a", "--backend", &wf, "workflow", TASK, "summary.xlsx", "--out", out]);
        assert_eq!(r.code, 0, "{}", r.stderr);
    }
    same_modulo_timestamps(&dir.path().join("r1"), &dir.path().join("r2"));
}
