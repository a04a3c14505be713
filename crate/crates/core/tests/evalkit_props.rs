mod common;

use std::collections::BTreeSet;

use common::*;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;
use sheetrag_core::evalkit::{
    cost_report, map_at_k, ndcg_at_k, read_query_set, recall_at_k, run_retrieval_eval, write_eval_report, EvalError,
    EvalReport, LabeledQuery, Metric, Retriever, Summary,
};
use sheetrag_core::index::FusionConfig;

const EPS: f64 = 1e-12;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn metrics_match_reference(seed in any::<u64>()) {
        let (ranking, relevant, k) = random_metric_instance(&mut StdRng::seed_from_u64(seed));
        let pairs = [
            (recall_at_k(&ranking, &relevant, k).unwrap(), ref_recall(&ranking, &relevant, k)),
            (ndcg_at_k(&ranking, &relevant, k).unwrap(), ref_ndcg(&ranking, &relevant, k)),
            (map_at_k(&ranking, &relevant, k).unwrap(), ref_map(&ranking, &relevant, k)),
        ];
        for (got, want) in pairs {
            prop_assert!((got - want).abs() <= EPS, "{} vs {}", got, want);
            prop_assert!((0.0..=1.0 + EPS).contains(&got));
        }
    }

    #[test]
    fn recall_grows_with_k(seed in any::<u64>()) {
        let (ranking, relevant, _) = random_metric_instance(&mut StdRng::seed_from_u64(seed));
        let mut last = 0.0;
        for k in 1..=30 {
            let r = recall_at_k(&ranking, &relevant, k).unwrap();
            prop_assert!(r >= last);
            last = r;
        }
    }

    #[test]
    fn relevant_prefix_scores_one(n in 1usize..12, k in 1usize..15, tail in 0usize..5) {
        let relevant: BTreeSet<String> = (0..n).map(|i| format!("r{i}")).collect();
        let mut ranking: Vec<String> = relevant.iter().cloned().collect();
        ranking.extend((0..tail).map(|i| format!("x{i}")));
        prop_assert!((ndcg_at_k(&ranking, &relevant, k).unwrap() - 1.0).abs() <= EPS);
        prop_assert!((map_at_k(&ranking, &relevant, k).unwrap() - 1.0).abs() <= EPS);
        let recall = recall_at_k(&ranking, &relevant, k).unwrap();
        prop_assert!((recall - n.min(k) as f64 / n as f64).abs() <= EPS);
    }

    #[test]
    fn irrelevant_rankings_score_zero(n in 1usize..8, len in 0usize..20, k in 1usize..25) {
        let relevant: BTreeSet<String> = (0..n).map(|i| format!("r{i}")).collect();
        let ranking: Vec<String> = (0..len).map(|i| format!("x{i}")).collect();
        for m in Metric::ALL {
            prop_assert_eq!(m.score(&ranking, &relevant, k).unwrap(), 0.0);
        }
    }

    #[test]
    fn duplicates_never_add_credit(seed in any::<u64>()) {
        let (ranking, relevant, k) = random_metric_instance(&mut StdRng::seed_from_u64(seed));
        let mut seen = BTreeSet::new();
        let dedup: Vec<String> = ranking.iter().map(|id| {
            if seen.insert(id.clone()) { id.clone() } else { format!("dup-{id}") }
        }).collect();
        for m in Metric::ALL {
            prop_assert!((m.score(&ranking, &relevant, k).unwrap() - m.score(&dedup, &relevant, k).unwrap()).abs() <= EPS);
        }
    }
}

#[test]
fn metric_arguments_are_checked() {
    let rel: BTreeSet<String> = ["a".to_string()].into();
    for m in Metric::ALL {
        assert!(matches!(m.score(&["a"], &BTreeSet::new(), 3), Err(EvalError::EmptyRelevantSet)));
        assert!(matches!(m.score(&["a"], &rel, 0), Err(EvalError::InvalidCutoff)));
    }
}

#[test]
fn eval_rejects_unknown_labels_and_bad_cutoffs() {
    let index = toy_index();
    let q = |id: &str| LabeledQuery {
        query_id: "q1".into(),
        query: "revenue".into(),
        relevant_chunk_ids: vec![id.into()],
    };
    let fusion = FusionConfig::default();
    let err = run_retrieval_eval(&index, &[q("toy_ledger/P&L/row/A9:E9")], &[5], &fusion).unwrap_err();
    assert!(matches!(err, EvalError::UnresolvedLabel { .. }));
    let good = [q("toy_ledger/P&L/row/A2:E2")];
    assert!(matches!(run_retrieval_eval(&index, &good, &[], &fusion), Err(EvalError::InvalidCutoff)));
    assert!(matches!(run_retrieval_eval(&index, &good, &[0, 5], &fusion), Err(EvalError::InvalidCutoff)));
    let report = run_retrieval_eval(&index, &good, &[10, 5, 10], &fusion).unwrap();
    assert_eq!(report.cutoffs, vec![5, 10]);
    assert_eq!(report.rows.len(), 3 * 3 * 2);
}

#[test]
fn report_round_trips_and_renders() {
    let index = suite_index();
    let suite = read_query_set(&fixture("retrieval_suite.json")).unwrap();
    let report = run_retrieval_eval(&index, &suite.queries, &[5, 10], &FusionConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eval.json");
    write_eval_report(&path, &report).unwrap();
    let back: EvalReport = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(back, report);
    let table = report.render_table();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("retriever"));
    assert!(lines[3].starts_with("hybrid"));
    assert!(lines[3].contains("1.0000"));
    assert!(report.value(Retriever::Dense, Metric::Recall, 7).is_none());
}

#[test]
fn query_set_validation() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, body: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    };
    let dup = write(
        "dup.json",
        r#"{"format_version":1,"queries":[{"query_id":"a","query":"x","relevant_chunk_ids":["c"]},{"query_id":"a","query":"y","relevant_chunk_ids":["c"]}]}"#,
    );
    assert!(matches!(read_query_set(&dup), Err(EvalError::QuerySet(_))));
    let empty = write(
        "empty.json",
        r#"{"format_version":1,"queries":[{"query_id":"a","query":"x","relevant_chunk_ids":[]}]}"#,
    );
    assert!(matches!(read_query_set(&empty), Err(EvalError::QuerySet(_))));
    let version = write("v.json", r#"{"format_version":2,"queries":[]}"#);
    assert!(matches!(read_query_set(&version), Err(EvalError::QuerySet(_))));
}

#[test]
fn cost_report_of_golden_query() {
    let run = golden_query_run();
    let all: Vec<_> = run.trace.all_entries().cloned().collect();
    let report = cost_report(&[all.clone(), all[..3].to_vec()]);
    assert_eq!(report.count, 2);
    assert_eq!(report.tool_calls.mean, (4.0 + 2.0) / 2.0);
    assert_eq!(report.latency_ms, Summary { mean: 0.0, median: 0.0 });
    let total: u64 = all.iter().map(|e| e.token_estimate).sum();
    assert!(total > 0);
    assert_eq!(report.tokens.median, (total + all[..3].iter().map(|e| e.token_estimate).sum::<u64>()) as f64 / 2.0);
    assert_eq!(cost_report::<Vec<_>>(&[]).count, 0);
    assert_eq!(Summary::of(&[3.0, 1.0, 2.0]), Summary { mean: 2.0, median: 2.0 });
}
