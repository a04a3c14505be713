//! Spreadsheet retrieval engine: workbook ingestion, multi-granular chunking,
//! hybrid dense + BM25 retrieval with reciprocal rank fusion, a bounded
//! tool-calling agent loop, and a planner that runs typed executors over a
//! dependency graph of subtasks.

pub mod agent;
pub mod chunker;
pub mod evalkit;
pub mod executors;
pub mod index;
pub mod planner;
pub mod workbook;

mod util;

pub use util::sha256_hex;
