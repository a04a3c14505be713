use serde::{Deserialize, Serialize};

use crate::chunker::ChunkKind;
use crate::index::{FusionConfig, Index, SearchFilter};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationHit {
    pub chunk_id: String,
    pub kind: ChunkKind,
    pub sheet: String,
    /// A1 span within the sheet.
    pub span: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermHits {
    pub term: String,
    pub hits: Vec<ExplorationHit>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExplorationContext {
    pub quoted_terms: Vec<String>,
    pub hits: Vec<TermHits>,
}

impl ExplorationContext {
    pub fn is_empty(&self) -> bool {
        self.quoted_terms.is_empty()
    }

    /// Text injected into the planner prompt; empty when nothing was searched.
    pub fn render(&self) -> String {
        if self.hits.is_empty() {
            return String::new();
        }
        let mut out = String::from("DATA EXPLORATION RESULTS:\n");
        for group in &self.hits {
            out.push_str(&format!("- \"{}\":", group.term));
            if group.hits.is_empty() {
                out.push_str(" no matches");
            }
            for (i, h) in group.hits.iter().enumerate() {
                out.push_str(if i == 0 { " " } else { ", " });
                out.push_str(&format!("{}!{} ({})", h.sheet, h.span, h.kind.as_str()));
            }
            out.push('\n');
        }
        out
    }
}

fn normalize_quotes(text: &str) -> String {
    text.chars()
        .map(|c| match c {
            '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{00AB}' | '\u{00BB}' => '"',
            '\u{2018}' | '\u{2019}' | '\u{201A}' => '\'',
            c => c,
        })
        .collect()
}

/// Substrings enclosed in straight single or double quotes, in order of
/// appearance without duplicates. A quote between two alphanumeric characters
/// is an apostrophe and neither opens nor closes a term.
pub fn extract_quoted_terms(task: &str) -> Vec<String> {
    let chars: Vec<char> = normalize_quotes(task).chars().collect();
    let word = |i: Option<usize>| i.and_then(|i| chars.get(i)).is_some_and(|c| c.is_alphanumeric());
    let mut terms: Vec<String> = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let q = chars[i];
        if (q == '"' || q == '\'') && !word(i.checked_sub(1)) {
            let close = (i + 1..chars.len()).find(|&j| chars[j] == q && !(q == '\'' && word(Some(j + 1))));
            if let Some(j) = close {
                let term: String = chars[i + 1..j].iter().collect::<String>().trim().to_string();
                if !term.is_empty() && !terms.contains(&term) {
                    terms.push(term);
                }
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    terms
}

/// Runs one hybrid search per quoted term and keeps the top `k` hits.
pub fn explore_data(task: &str, index: &Index, k: usize, fusion: &FusionConfig) -> ExplorationContext {
    let quoted_terms = extract_quoted_terms(task);
    let config = fusion.with_top_k(k.max(1));
    let hits = quoted_terms
        .iter()
        .map(|term| TermHits {
            term: term.clone(),
            hits: index
                .hybrid_search(term, &SearchFilter::default(), &config)
                .into_iter()
                .map(|h| ExplorationHit {
                    span: h.chunk.range().to_string(),
                    chunk_id: h.chunk.chunk_id,
                    kind: h.chunk.kind,
                    sheet: h.chunk.sheet,
                    score: h.rrf_score,
                })
                .collect(),
        })
        .collect();
    ExplorationContext { quoted_terms, hits }
}
