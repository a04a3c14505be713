//! Reciprocal rank fusion.
//!
//! Every chunk that appears in at least one ranked list scores
//! `Σ 1 / (k + rank)` over the lists containing it, with 1-based ranks.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// One retriever's ranking, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub source: String,
    pub entries: Vec<(String, f64)>,
}

impl RankedList {
    pub fn new(source: impl Into<String>, entries: Vec<(String, f64)>) -> Self {
        RankedList {
            source: source.into(),
            entries,
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }

    /// Checks non-increasing scores and unique ids.
    pub fn validate(&self) -> Result<(), String> {
        let mut seen = std::collections::HashSet::new();
        for (i, (id, score)) in self.entries.iter().enumerate() {
            if !seen.insert(id) {
                return Err(format!("{}: duplicate id {id}", self.source));
            }
            if i > 0 && *score > self.entries[i - 1].1 {
                return Err(format!("{}: scores increase at position {}", self.source, i + 1));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Rank offset in the fusion denominator.
    pub k: u32,
    /// Number of fused results returned.
    pub top_k: usize,
    /// Entries requested from each per-retriever list before fusing.
    pub list_depth: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            k: 60,
            top_k: 10,
            list_depth: 50,
        }
    }
}

impl FusionConfig {
    pub fn with_top_k(mut self, top_k: usize) -> Self {
        self.top_k = top_k;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.k < 1 || self.top_k < 1 || self.list_depth < 1 {
            return Err("fusion k, top_k and list_depth must be ≥ 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedEntry {
    pub chunk_id: String,
    pub rrf_score: f64,
    /// (source, 1-based rank) for each list containing the chunk.
    pub contributing: Vec<(String, usize)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FusedResult {
    pub entries: Vec<FusedEntry>,
}

/// Fuses ranked lists; ties are broken by ascending chunk id.
pub fn rrf_fuse(lists: &[RankedList], config: &FusionConfig) -> FusedResult {
    let k = config.k as f64;
    let mut acc: HashMap<&str, FusedEntry> = HashMap::new();
    for list in lists {
        for (pos, (id, _)) in list.entries.iter().enumerate() {
            let rank = pos + 1;
            let e = acc.entry(id.as_str()).or_insert_with(|| FusedEntry {
                chunk_id: id.clone(),
                rrf_score: 0.0,
                contributing: Vec::new(),
            });
            e.rrf_score += 1.0 / (k + rank as f64);
            e.contributing.push((list.source.clone(), rank));
        }
    }
    let mut entries: Vec<FusedEntry> = acc.into_values().collect();
    entries.sort_by(|a, b| {
        b.rrf_score
            .total_cmp(&a.rrf_score)
            .then_with(|| a.chunk_id.cmp(&b.chunk_id))
    });
    entries.truncate(config.top_k);
    FusedResult { entries }
}
