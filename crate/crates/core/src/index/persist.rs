//! On-disk index directory:
//!
//! - `manifest.json`: format version, embedder id, dimension, per-file SHA-256
//! - `catalog.jsonl`: one chunk record per line, in id order
//! - `postings.jsonl`: a `doc_lengths` header line, then one line per term
//! - `vectors.f32`: little-endian f32 unit vectors, row-major, catalog order

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Bm25Index, Embedder, Index, IndexError};
use crate::chunker::Chunk;
use crate::util::{atomic_write, sha256_hex};

pub const INDEX_FORMAT_VERSION: u32 = 1;

const MANIFEST: &str = "manifest.json";
const CATALOG: &str = "catalog.jsonl";
const POSTINGS: &str = "postings.jsonl";
const VECTORS: &str = "vectors.f32";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    embedder_id: String,
    dimension: usize,
    chunks: usize,
    checksums: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct PostingsHeader {
    doc_lengths: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct PostingsLine {
    term: String,
    postings: Vec<(u32, u32)>,
}

pub fn persist_index(index: &Index, dir: &Path) -> Result<(), IndexError> {
    std::fs::create_dir_all(dir)?;
    let mut catalog = Vec::new();
    for c in &index.chunks {
        serde_json::to_writer(&mut catalog, c).map_err(std::io::Error::other)?;
        catalog.push(b'\n');
    }
    let mut postings = Vec::new();
    serde_json::to_writer(
        &mut postings,
        &PostingsHeader {
            doc_lengths: index.lexical.doc_lengths().to_vec(),
        },
    )
    .map_err(std::io::Error::other)?;
    postings.push(b'\n');
    for (term, list) in index.lexical.postings() {
        serde_json::to_writer(
            &mut postings,
            &PostingsLine {
                term: term.clone(),
                postings: list.clone(),
            },
        )
        .map_err(std::io::Error::other)?;
        postings.push(b'\n');
    }
    let mut vectors = Vec::with_capacity(index.chunks.len() * index.dimension * 4);
    for i in 0..index.chunks.len() {
        for v in index.vector_of(i) {
            vectors.write_all(&v.to_le_bytes())?;
        }
    }

    let mut checksums = BTreeMap::new();
    for (name, bytes) in [(CATALOG, &catalog), (POSTINGS, &postings), (VECTORS, &vectors)] {
        checksums.insert(name.to_string(), sha256_hex(bytes));
        atomic_write(&dir.join(name), bytes)?;
    }
    let manifest = Manifest {
        format_version: INDEX_FORMAT_VERSION,
        embedder_id: index.embedder.id().to_string(),
        dimension: index.dimension,
        chunks: index.chunks.len(),
        checksums,
    };
    let mut m = serde_json::to_vec_pretty(&manifest).map_err(std::io::Error::other)?;
    m.push(b'\n');
    atomic_write(&dir.join(MANIFEST), &m)?;
    Ok(())
}

fn corrupt(msg: impl Into<String>) -> IndexError {
    IndexError::CorruptIndex(msg.into())
}

fn read_checked(dir: &Path, name: &str, manifest: &Manifest) -> Result<Vec<u8>, IndexError> {
    let bytes = std::fs::read(dir.join(name)).map_err(|e| corrupt(format!("{name}: {e}")))?;
    let expected = manifest
        .checksums
        .get(name)
        .ok_or_else(|| corrupt(format!("manifest has no checksum for {name}")))?;
    if &sha256_hex(&bytes) != expected {
        return Err(corrupt(format!("{name}: checksum mismatch")));
    }
    Ok(bytes)
}

/// Loads an index persisted by [`persist_index`]; the embedder must match the
/// one recorded in the manifest.
pub fn load_index(dir: &Path, embedder: Arc<dyn Embedder>) -> Result<Index, IndexError> {
    if !dir.is_dir() {
        return Err(IndexError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("index directory {} not found", dir.display()),
        )));
    }
    let manifest_bytes = std::fs::read(dir.join(MANIFEST)).map_err(|e| corrupt(format!("{MANIFEST}: {e}")))?;
    let raw: serde_json::Value =
        serde_json::from_slice(&manifest_bytes).map_err(|e| corrupt(format!("{MANIFEST}: {e}")))?;
    let version = raw.get("format_version").and_then(|v| v.as_u64());
    if version != Some(INDEX_FORMAT_VERSION as u64) {
        return Err(IndexError::IncompatibleVersion(format!(
            "format_version {version:?}, expected {INDEX_FORMAT_VERSION}"
        )));
    }
    let manifest: Manifest = serde_json::from_value(raw).map_err(|e| corrupt(format!("{MANIFEST}: {e}")))?;
    if manifest.embedder_id != embedder.id() || manifest.dimension != embedder.dimension() {
        return Err(IndexError::IncompatibleVersion(format!(
            "index built with {} (D={}), loaded with {} (D={})",
            manifest.embedder_id,
            manifest.dimension,
            embedder.id(),
            embedder.dimension()
        )));
    }

    let catalog = read_checked(dir, CATALOG, &manifest)?;
    let chunks: Vec<Chunk> = catalog
        .split(|&b| b == b'\n')
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_slice(l).map_err(|e| corrupt(format!("{CATALOG}: {e}"))))
        .collect::<Result<_, _>>()?;
    if chunks.len() != manifest.chunks {
        return Err(corrupt(format!("expected {} chunks, found {}", manifest.chunks, chunks.len())));
    }

    let postings_bytes = read_checked(dir, POSTINGS, &manifest)?;
    let mut lines = postings_bytes.split(|&b| b == b'\n').filter(|l| !l.is_empty());
    let header: PostingsHeader = lines
        .next()
        .ok_or_else(|| corrupt("postings header missing"))
        .and_then(|l| serde_json::from_slice(l).map_err(|e| corrupt(format!("{POSTINGS}: {e}"))))?;
    let mut postings = BTreeMap::new();
    for l in lines {
        let line: PostingsLine = serde_json::from_slice(l).map_err(|e| corrupt(format!("{POSTINGS}: {e}")))?;
        if line.postings.iter().any(|&(d, _)| d as usize >= chunks.len()) {
            return Err(corrupt(format!("posting for `{}` references a missing document", line.term)));
        }
        postings.insert(line.term, line.postings);
    }
    if header.doc_lengths.len() != chunks.len() {
        return Err(corrupt("postings document count differs from catalog"));
    }

    let vector_bytes = read_checked(dir, VECTORS, &manifest)?;
    if vector_bytes.len() != chunks.len() * manifest.dimension * 4 {
        return Err(corrupt(format!("{VECTORS}: unexpected length {}", vector_bytes.len())));
    }
    let vectors: Vec<f32> = vector_bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();

    Ok(Index::assemble(
        embedder,
        chunks,
        vectors,
        Bm25Index::from_parts(postings, header.doc_lengths),
    ))
}
