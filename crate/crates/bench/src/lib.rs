//! Corpus builders shared by the retrieval benchmarks.

use std::path::Path;

use sheetrag_core::chunker::{chunk_workbook, Chunk, ChunkConfig};
use sheetrag_core::index::RankedList;
use sheetrag_core::workbook::ingest_path;

/// Chunks of the bundled fixture workbooks, repeated `copies` times under
/// distinct workbook ids.
pub fn fixture_corpus(copies: usize) -> Vec<Chunk> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures");
    let mut base = Vec::new();
    for name in ["toy_ledger.wb.json", "vendor_invoices.wb.json"] {
        let wb = ingest_path(&dir.join(name)).expect("fixture ingests");
        base.extend(chunk_workbook(&wb, &ChunkConfig::default()).expect("fixture chunks"));
    }
    (0..copies)
        .flat_map(|copy| {
            base.iter().cloned().map(move |mut c| {
                c.chunk_id = format!("copy{copy}/{}", c.chunk_id);
                c.workbook_id = format!("copy{copy}/{}", c.workbook_id);
                c
            })
        })
        .collect()
}

/// `lists` rankings of `depth` ids drawn from a pool of `2 * depth` ids,
/// overlapping the way dense and lexical rankings typically do.
pub fn ranked_lists(lists: usize, depth: usize) -> Vec<RankedList> {
    (0..lists)
        .map(|l| {
            let entries = (0..depth)
                .map(|r| (format!("c{}", (r * (l + 1) + l * 7) % (2 * depth)), (depth - r) as f64))
                .collect::<Vec<_>>();
            let mut seen = std::collections::HashSet::new();
            let entries = entries.into_iter().filter(|(id, _)| seen.insert(id.clone())).collect();
            RankedList::new(format!("list{l}"), entries)
        })
        .collect()
}
