//! Hybrid retrieval over chunks: exact cosine search on unit embeddings,
//! BM25 over chunk text, and reciprocal rank fusion of one ranked list per
//! (retriever, chunk kind) pair.

pub mod bm25;
mod embed;
mod fusion;
mod persist;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunker::{Chunk, ChunkKind};

pub use bm25::Bm25Index;
pub use embed::{cosine, EmbedError, Embedder, EmbeddingVector, HttpEmbedder, MockEmbedder};
pub use fusion::{rrf_fuse, FusedEntry, FusedResult, FusionConfig, RankedList};
pub use persist::{load_index, persist_index, INDEX_FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("duplicate chunk id `{0}`")]
    DuplicateChunkId(String),
    #[error("embedder failed on chunk `{chunk_id}` after {embedded} of {total} chunks: {cause}")]
    EmbedderFailure {
        chunk_id: String,
        cause: EmbedError,
        embedded: usize,
        total: usize,
    },
    #[error("incompatible index: {0}")]
    IncompatibleVersion(String),
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Optional kind and coordinate restrictions. A coordinate filter keeps
/// chunks whose span contains the given row and/or column.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchFilter {
    pub kind: Option<ChunkKind>,
    pub row: Option<u32>,
    pub col: Option<u32>,
}

impl SearchFilter {
    pub fn kind(kind: ChunkKind) -> Self {
        SearchFilter {
            kind: Some(kind),
            ..Default::default()
        }
    }

    pub fn matches(&self, chunk: &Chunk) -> bool {
        self.kind.is_none_or(|k| chunk.kind == k)
            && self.row.is_none_or(|r| chunk.contains_row(r))
            && self.col.is_none_or(|c| chunk.contains_col(c))
    }
}

/// A fused hit with the chunk it refers to.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchHit {
    pub chunk: Chunk,
    pub rrf_score: f64,
    pub contributing: Vec<(String, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IndexStats {
    pub chunks: usize,
    pub by_kind: BTreeMap<ChunkKind, usize>,
    pub lexical_docs: usize,
    pub vocabulary: usize,
    pub dimension: usize,
}

/// Unit vectors of one chunk kind, row-major.
#[derive(Debug, Clone, Default)]
struct DenseStore {
    docs: Vec<u32>,
    vectors: Vec<f32>,
}

pub struct Index {
    embedder: Arc<dyn Embedder>,
    dimension: usize,
    chunks: Vec<Chunk>,
    by_id: HashMap<String, usize>,
    dense: BTreeMap<ChunkKind, DenseStore>,
    lexical: Bm25Index,
}

impl std::fmt::Debug for Index {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Index")
            .field("embedder", &self.embedder.id())
            .field("chunks", &self.chunks.len())
            .finish()
    }
}

/// Embeds all chunks (concurrently) and builds the dense and lexical stores.
/// Chunks are stored sorted by id, so the result does not depend on input
/// order or on embedding completion order.
pub fn build_index(chunks: Vec<Chunk>, embedder: Arc<dyn Embedder>) -> Result<Index, IndexError> {
    let mut seen = HashSet::new();
    for c in &chunks {
        if !seen.insert(c.chunk_id.as_str()) {
            return Err(IndexError::DuplicateChunkId(c.chunk_id.clone()));
        }
    }
    let mut chunks = chunks;
    chunks.sort_by(|a, b| a.chunk_id.cmp(&b.chunk_id));

    let dim = embedder.dimension();
    let embedded: Vec<Result<EmbeddingVector, EmbedError>> = chunks
        .par_iter()
        .map(|c| {
            let raw = match &c.image {
                Some(img) => embedder.embed_image(&img.payload, &c.text),
                None => embedder.embed_text(&c.text),
            }?;
            if raw.len() != dim {
                return Err(EmbedError::Dimension {
                    got: raw.len(),
                    expected: dim,
                });
            }
            EmbeddingVector::new(raw)
        })
        .collect();

    let total = chunks.len();
    let mut vectors = Vec::with_capacity(total * dim);
    for (i, r) in embedded.into_iter().enumerate() {
        match r {
            Ok(v) => vectors.extend_from_slice(v.values()),
            Err(cause) => {
                return Err(IndexError::EmbedderFailure {
                    chunk_id: chunks[i].chunk_id.clone(),
                    cause,
                    embedded: i,
                    total,
                })
            }
        }
    }
    let lexical = Bm25Index::build(chunks.iter().map(|c| c.text.as_str()));
    Ok(Index::assemble(embedder, chunks, vectors, lexical))
}

impl Index {
    fn assemble(embedder: Arc<dyn Embedder>, chunks: Vec<Chunk>, vectors: Vec<f32>, lexical: Bm25Index) -> Self {
        let dimension = embedder.dimension();
        let mut dense: BTreeMap<ChunkKind, DenseStore> = BTreeMap::new();
        for (i, c) in chunks.iter().enumerate() {
            let store = dense.entry(c.kind).or_default();
            store.docs.push(i as u32);
            store.vectors.extend_from_slice(&vectors[i * dimension..(i + 1) * dimension]);
        }
        let by_id = chunks.iter().enumerate().map(|(i, c)| (c.chunk_id.clone(), i)).collect();
        Index {
            embedder,
            dimension,
            chunks,
            by_id,
            dense,
            lexical,
        }
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&Chunk> {
        self.by_id.get(chunk_id).map(|&i| &self.chunks[i])
    }

    pub fn lexical(&self) -> &Bm25Index {
        &self.lexical
    }

    pub fn kinds(&self) -> impl Iterator<Item = ChunkKind> + '_ {
        self.dense.keys().copied()
    }

    /// Unit vector for the chunk at catalog position `i`.
    pub(crate) fn vector_of(&self, i: usize) -> &[f32] {
        let kind = self.chunks[i].kind;
        let store = &self.dense[&kind];
        let pos = store.docs.binary_search(&(i as u32)).expect("chunk in its kind store");
        &store.vectors[pos * self.dimension..(pos + 1) * self.dimension]
    }

    pub fn stats(&self) -> IndexStats {
        let mut by_kind = BTreeMap::new();
        for c in &self.chunks {
            *by_kind.entry(c.kind).or_insert(0) += 1;
        }
        IndexStats {
            chunks: self.chunks.len(),
            by_kind,
            lexical_docs: self.lexical.n_docs(),
            vocabulary: self.lexical.vocabulary_size(),
            dimension: self.dimension,
        }
    }

    /// Top-`k` chunks by cosine similarity to the query embedding.
    pub fn dense_search(&self, query: &str, filter: &SearchFilter, k: usize) -> RankedList {
        let source = format!("dense:{}", filter.kind.map_or("all", ChunkKind::as_str));
        let q = match self
            .embedder
            .embed_text(query)
            .ok()
            .filter(|v| v.len() == self.dimension)
            .and_then(|v| EmbeddingVector::new(v).ok())
        {
            Some(q) => q,
            None => return RankedList::new(source, Vec::new()),
        };
        let mut scored: Vec<(usize, f64)> = Vec::new();
        for (kind, store) in &self.dense {
            if filter.kind.is_some_and(|k| k != *kind) {
                continue;
            }
            for (pos, &doc) in store.docs.iter().enumerate() {
                let chunk = &self.chunks[doc as usize];
                if !filter.matches(chunk) {
                    continue;
                }
                let v = &store.vectors[pos * self.dimension..(pos + 1) * self.dimension];
                scored.push((doc as usize, cosine(q.values(), v)));
            }
        }
        self.rank(source, scored, k)
    }

    /// Top-`k` chunks by BM25. Chunks sharing no term with the query never appear.
    pub fn lexical_search(&self, query: &str, filter: &SearchFilter, k: usize) -> RankedList {
        let source = format!("lexical:{}", filter.kind.map_or("all", ChunkKind::as_str));
        let scored: Vec<(usize, f64)> = self
            .lexical
            .score(query)
            .into_iter()
            .map(|(doc, s)| (doc as usize, s))
            .filter(|(doc, s)| *s > 0.0 && filter.matches(&self.chunks[*doc]))
            .collect();
        self.rank(source, scored, k)
    }

    fn rank(&self, source: String, mut scored: Vec<(usize, f64)>, k: usize) -> RankedList {
        // catalog order is chunk id order, so doc index breaks ties by id
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        RankedList::new(
            source,
            scored
                .into_iter()
                .map(|(doc, s)| (self.chunks[doc].chunk_id.clone(), s))
                .collect(),
        )
    }

    /// The per-(retriever, kind) lists fused by [`Index::hybrid_search`].
    pub fn hybrid_lists(&self, query: &str, filter: &SearchFilter, config: &FusionConfig) -> Vec<RankedList> {
        let kinds: Vec<ChunkKind> = match filter.kind {
            Some(k) => vec![k],
            None => ChunkKind::ALL.to_vec(),
        };
        let mut lists = Vec::new();
        for kind in kinds {
            if !self.dense.contains_key(&kind) {
                continue;
            }
            let f = SearchFilter {
                kind: Some(kind),
                ..*filter
            };
            for list in [
                self.dense_search(query, &f, config.list_depth),
                self.lexical_search(query, &f, config.list_depth),
            ] {
                if !list.entries.is_empty() {
                    lists.push(list);
                }
            }
        }
        lists
    }

    /// Dense and lexical search per eligible kind, fused by RRF; returns the
    /// top `config.top_k` chunks.
    pub fn hybrid_search(&self, query: &str, filter: &SearchFilter, config: &FusionConfig) -> Vec<SearchHit> {
        let lists = self.hybrid_lists(query, filter, config);
        rrf_fuse(&lists, config)
            .entries
            .into_iter()
            .map(|e| SearchHit {
                chunk: self.chunk(&e.chunk_id).expect("fused id is indexed").clone(),
                rrf_score: e.rrf_score,
                contributing: e.contributing,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunker::ChunkImage;

    fn chunk(id: &str, kind: ChunkKind, row: u32, text: &str) -> Chunk {
        Chunk {
            chunk_id: id.into(),
            kind,
            workbook_id: "wb".into(),
            sheet: "S".into(),
            row_span: (row, row),
            col_span: (1, 2),
            headers: vec![],
            text: text.into(),
            cells: vec![],
            image: (kind == ChunkKind::Image).then(|| ChunkImage {
                image_id: format!("{id}-img"),
                encoding: "image/png".into(),
                alt_text: text.into(),
                payload: vec![1, 2, 3],
            }),
        }
    }

    fn corpus() -> Vec<Chunk> {
        vec![
            chunk("a", ChunkKind::Row, 1, "region revenue cost"),
            chunk("b", ChunkKind::Row, 2, "EMEA 1200 900"),
            chunk("c", ChunkKind::Row, 3, "APAC 800 500"),
            chunk("d", ChunkKind::Column, 1, "revenue 1200 800"),
            chunk("e", ChunkKind::Image, 4, "margin chart"),
        ]
    }

    fn mock() -> Arc<dyn Embedder> {
        Arc::new(MockEmbedder::default())
    }

    struct Zero;
    impl Embedder for Zero {
        fn id(&self) -> &str {
            "zero"
        }
        fn dimension(&self) -> usize {
            4
        }
        fn embed_text(&self, _: &str) -> Result<Vec<f32>, EmbedError> {
            Ok(vec![0.0; 4])
        }
        fn embed_image(&self, _: &[u8], _: &str) -> Result<Vec<f32>, EmbedError> {
            Ok(vec![0.0; 4])
        }
    }

    #[test]
    fn empty_index_returns_nothing() {
        let idx = build_index(vec![], mock()).unwrap();
        assert!(idx.is_empty());
        assert!(idx.hybrid_search("x", &SearchFilter::default(), &FusionConfig::default()).is_empty());
        assert!(idx.dense_search("x", &SearchFilter::default(), 5).entries.is_empty());
    }

    #[test]
    fn catalog_counts() {
        let idx = build_index(corpus(), mock()).unwrap();
        let stats = idx.stats();
        assert_eq!(stats.chunks, 5);
        assert_eq!(stats.by_kind[&ChunkKind::Image], 1);
        assert_eq!(stats.by_kind.values().sum::<usize>() - stats.by_kind[&ChunkKind::Image], 4);
        assert_eq!(stats.lexical_docs, 5);
    }

    #[test]
    fn zero_vector_is_embedder_failure() {
        let err = build_index(corpus(), Arc::new(Zero)).unwrap_err();
        assert!(matches!(err, IndexError::EmbedderFailure { embedded: 0, total: 5, .. }));
    }

    #[test]
    fn duplicate_ids() {
        let mut c = corpus();
        c.push(chunk("a", ChunkKind::Row, 9, "dup"));
        assert!(matches!(build_index(c, mock()), Err(IndexError::DuplicateChunkId(id)) if id == "a"));
    }

    #[test]
    fn identical_text_ranks_first_with_unit_score() {
        let idx = build_index(corpus(), mock()).unwrap();
        let r = idx.dense_search("APAC 800 500", &SearchFilter::default(), 3);
        assert_eq!(r.entries[0].0, "c");
        assert!((r.entries[0].1 - 1.0).abs() < 1e-6);
        assert!(r.validate().is_ok());
    }

    #[test]
    fn k_clamps_to_corpus() {
        let idx = build_index(corpus(), mock()).unwrap();
        assert_eq!(idx.dense_search("x", &SearchFilter::default(), 100).entries.len(), 5);
        let no_img = build_index(corpus().into_iter().take(4).collect(), mock()).unwrap();
        assert!(no_img.dense_search("chart", &SearchFilter::kind(ChunkKind::Image), 10).entries.is_empty());
    }

    #[test]
    fn lexical_sole_match() {
        let idx = build_index(corpus(), mock()).unwrap();
        let r = idx.lexical_search("EMEA", &SearchFilter::default(), 10);
        assert_eq!(r.entries.len(), 1);
        assert_eq!(r.entries[0].0, "b");
        assert!(idx.lexical_search("", &SearchFilter::default(), 10).entries.is_empty());
    }

    #[test]
    fn row_filter_is_sound() {
        let idx = build_index(corpus(), mock()).unwrap();
        let f = SearchFilter {
            kind: Some(ChunkKind::Row),
            row: Some(2),
            col: None,
        };
        let hits = idx.hybrid_search("revenue", &f, &FusionConfig::default());
        assert!(!hits.is_empty());
        assert!(hits.iter().all(|h| h.chunk.row_span == (2, 2)));
    }

    #[test]
    fn hybrid_is_union_of_retrievers() {
        let idx = build_index(corpus(), mock()).unwrap();
        let hits = idx.hybrid_search("1200", &SearchFilter::default(), &FusionConfig::default());
        let fused: f64 = hits.iter().find(|h| h.chunk.chunk_id == "b").unwrap().rrf_score;
        let recomputed: f64 = hits
            .iter()
            .find(|h| h.chunk.chunk_id == "b")
            .unwrap()
            .contributing
            .iter()
            .map(|(_, r)| 1.0 / (60.0 + *r as f64))
            .sum();
        assert!((fused - recomputed).abs() < 1e-15);
    }
}
