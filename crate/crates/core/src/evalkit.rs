//! Retrieval metrics over labeled query sets and cost summaries of agent
//! traces.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{TraceEntry, BOOTSTRAP_CALL_ID};
use crate::index::{FusionConfig, Index, SearchFilter};
use crate::util::atomic_write;

pub const QUERY_SET_FORMAT_VERSION: u32 = 1;
pub const EVAL_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_CUTOFFS: [usize; 2] = [5, 10];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("relevant set is empty")]
    EmptyRelevantSet,
    #[error("cutoff must be ≥ 1")]
    InvalidCutoff,
    #[error("query `{query_id}` labels unknown chunk `{chunk_id}`")]
    UnresolvedLabel { query_id: String, chunk_id: String },
    #[error("query set: {0}")]
    QuerySet(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn check(relevant: &BTreeSet<String>, k: usize) -> Result<(), EvalError> {
    if k < 1 {
        return Err(EvalError::InvalidCutoff);
    }
    if relevant.is_empty() {
        return Err(EvalError::EmptyRelevantSet);
    }
    Ok(())
}

/// Zero-based positions within the top `k` holding a relevant id seen for
/// the first time.
fn hit_positions<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<String>, k: usize) -> Vec<usize> {
    let mut seen: HashSet<&str> = HashSet::new();
    let mut out = Vec::new();
    for (i, id) in ranking.iter().take(k).enumerate() {
        let id = id.as_ref();
        if relevant.contains(id) && seen.insert(id) {
            out.push(i);
        }
    }
    out
}

pub fn recall_at_k<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<String>, k: usize) -> Result<f64, EvalError> {
    check(relevant, k)?;
    Ok(hit_positions(ranking, relevant, k).len() as f64 / relevant.len() as f64)
}

/// Binary-gain nDCG with discount `1 / log2(pos + 1)` for 1-based positions.
pub fn ndcg_at_k<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<String>, k: usize) -> Result<f64, EvalError> {
    check(relevant, k)?;
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = hit_positions(ranking, relevant, k).into_iter().map(discount).sum();
    let ideal: f64 = (0..relevant.len().min(k)).map(discount).sum();
    Ok(dcg / ideal)
}

/// Average precision at the ranks of relevant hits, normalized by
/// `min(|relevant|, k)`.
pub fn map_at_k<S: AsRef<str>>(ranking: &[S], relevant: &BTreeSet<String>, k: usize) -> Result<f64, EvalError> {
    check(relevant, k)?;
    let sum: f64 = hit_positions(ranking, relevant, k)
        .into_iter()
        .enumerate()
        .map(|(n, i)| (n + 1) as f64 / (i + 1) as f64)
        .sum();
    Ok(sum / relevant.len().min(k) as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledQuery {
    pub query_id: String,
    pub query: String,
    pub relevant_chunk_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySet {
    pub format_version: u32,
    pub queries: Vec<LabeledQuery>,
}

impl QuerySet {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.format_version != QUERY_SET_FORMAT_VERSION {
            return Err(EvalError::QuerySet(format!(
                "format_version {} is not supported",
                self.format_version
            )));
        }
        let mut ids = HashSet::new();
        for q in &self.queries {
            if !ids.insert(&q.query_id) {
                return Err(EvalError::QuerySet(format!("duplicate query_id `{}`", q.query_id)));
            }
            if q.relevant_chunk_ids.is_empty() {
                return Err(EvalError::QuerySet(format!("query `{}` has no relevant chunks", q.query_id)));
            }
        }
        Ok(())
    }
}

pub fn read_query_set(path: &Path) -> Result<QuerySet, EvalError> {
    let text = std::fs::read_to_string(path)?;
    let set: QuerySet = serde_json::from_str(&text).map_err(|e| EvalError::QuerySet(e.to_string()))?;
    set.validate()?;
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Retriever {
    Dense,
    Lexical,
    Hybrid,
}

impl Retriever {
    pub const ALL: [Retriever; 3] = [Retriever::Dense, Retriever::Lexical, Retriever::Hybrid];

    pub fn as_str(self) -> &'static str {
        match self {
            Retriever::Dense => "dense",
            Retriever::Lexical => "lexical",
            Retriever::Hybrid => "hybrid",
        }
    }

    /// Top-`k` chunk ids for `query` over all chunk kinds.
    pub fn rank(self, index: &Index, query: &str, k: usize, fusion: &FusionConfig) -> Vec<String> {
        let all = SearchFilter::default();
        match self {
            Retriever::Dense => index.dense_search(query, &all, k).ids().map(String::from).collect(),
            Retriever::Lexical => index.lexical_search(query, &all, k).ids().map(String::from).collect(),
            Retriever::Hybrid => index
                .hybrid_search(query, &all, &fusion.with_top_k(k))
                .into_iter()
                .map(|h| h.chunk.chunk_id)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ndcg,
    Recall,
    Map,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Ndcg, Metric::Recall, Metric::Map];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Ndcg => "nDCG",
            Metric::Recall => "Recall",
            Metric::Map => "MAP",
        }
    }

    pub fn score<S: AsRef<str>>(self, ranking: &[S], relevant: &BTreeSet<String>, k: usize) -> Result<f64, EvalError> {
        match self {
            Metric::Ndcg => ndcg_at_k(ranking, relevant, k),
            Metric::Recall => recall_at_k(ranking, relevant, k),
            Metric::Map => map_at_k(ranking, relevant, k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub retriever: Retriever,
    pub metric: Metric,
    pub k: usize,
    /// Mean over queries.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub queries: usize,
    pub cutoffs: Vec<usize>,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn value(&self, retriever: Retriever, metric: Metric, k: usize) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.retriever == retriever && r.metric == metric && r.k == k)
            .map(|r| r.value)
    }

    /// Aligned text table: one line per retriever, one column per metric and cutoff.
    pub fn render_table(&self) -> String {
        let mut headers = vec!["retriever".to_string()];
        for m in Metric::ALL {
            for k in &self.cutoffs {
                headers.push(format!("{}@{k}", m.label()));
            }
        }
        let mut lines = vec![headers];
        for r in Retriever::ALL {
            let mut line = vec![r.as_str().to_string()];
            for m in Metric::ALL {
                for &k in &self.cutoffs {
                    line.push(self.value(r, m, k).map_or("-".into(), |v| format!("{v:.4}")));
                }
            }
            lines.push(line);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for line in lines {
            let cells: Vec<String> = line
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    if c == 0 {
                        format!("{s:<w$}", w = widths[c])
                    } else {
                        format!("{s:>w$}", w = widths[c])
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }
}

pub fn write_eval_report(path: &Path, report: &EvalReport) -> Result<(), EvalError> {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    atomic_write(path, text.as_bytes())?;
    Ok(())
}

/// Mean nDCG, Recall and MAP per retriever and cutoff. Labels must name
/// indexed chunks.
pub fn run_retrieval_eval(
    index: &Index,
    queries: &[LabeledQuery],
    cutoffs: &[usize],
    fusion: &FusionConfig,
) -> Result<EvalReport, EvalError> {
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(EvalError::InvalidCutoff);
    }
    let mut cutoffs = cutoffs.to_vec();
    cutoffs.sort_unstable();
    cutoffs.dedup();
    for q in queries {
        if q.relevant_chunk_ids.is_empty() {
            return Err(EvalError::EmptyRelevantSet);
        }
        if let Some(bad) = q.relevant_chunk_ids.iter().find(|id| index.chunk(id).is_none()) {
            return Err(EvalError::UnresolvedLabel {
                query_id: q.query_id.clone(),
                chunk_id: bad.clone(),
            });
        }
    }
    let depth = *cutoffs.last().expect("non-empty");
    let per_query: Vec<BTreeMap<(Retriever, Metric, usize), f64>> = queries
        .par_iter()
        .map(|q| {
            let relevant: BTreeSet<String> = q.relevant_chunk_ids.iter().cloned().collect();
            let mut scores = BTreeMap::new();
            for r in Retriever::ALL {
                let ranking = r.rank(index, &q.query, depth, fusion);
                for m in Metric::ALL {
                    for &k in &cutoffs {
                        let v = m.score(&ranking, &relevant, k).expect("validated labels and cutoffs");
                        scores.insert((r, m, k), v);
                    }
                }
            }
            scores
        })
        .collect();
    let mut rows = Vec::new();
    for r in Retriever::ALL {
        for m in Metric::ALL {
            for &k in &cutoffs {
                let sum: f64 = per_query.iter().map(|s| s[&(r, m, k)]).sum();
                let value = if per_query.is_empty() { 0.0 } else { sum / per_query.len() as f64 };
                rows.push(EvalRow {
                    retriever: r,
                    metric: m,
                    k,
                    value,
                });
            }
        }
    }
    Ok(EvalReport {
        format_version: EVAL_FORMAT_VERSION,
        queries: queries.len(),
        cutoffs,
        rows,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Summary::default();
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
        Summary {
            mean: v.iter().sum::<f64>() / n as f64,
            median,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub count: usize,
    pub tool_calls: Summary,
    pub tokens: Summary,
    /// Milliseconds between the first and last recorded call of each run.
    pub latency_ms: Summary,
}

/// Per-run tool calls (bootstrap excluded), token estimates and latency.
pub fn cost_report<T: AsRef<[TraceEntry]>>(traces: &[T]) -> CostReport {
    let mut calls = Vec::new();
    let mut tokens = Vec::new();
    let mut latency = Vec::new();
    for t in traces {
        let entries = t.as_ref();
        calls.push(entries.iter().filter(|e| e.tool_call.call_id != BOOTSTRAP_CALL_ID).count() as f64);
        tokens.push(entries.iter().map(|e| e.token_estimate).sum::<u64>() as f64);
        let first = entries.iter().map(|e| e.timestamp_ms).min().unwrap_or(0);
        let last = entries.iter().map(|e| e.timestamp_ms).max().unwrap_or(0);
        latency.push((last - first) as f64);
    }
    CostReport {
        count: traces.len(),
        tool_calls: Summary::of(&calls),
        tokens: Summary::of(&tokens),
        latency_ms: Summary::of(&latency),
    }
}
