use std::sync::Arc;

use serde_json::{Map, Value};

use super::message::{ImageContent, ResultChunk};
use super::tools::{args, ParamSpec, ParamType, Tool, ToolError, ToolOutput, ToolRegistry, ToolSchema};
use crate::chunker::ChunkKind;
use crate::index::{FusionConfig, Index, SearchFilter, SearchHit};

pub const SEARCH_TOOL_NAMES: [&str; 5] =
    ["search_rows", "search_columns", "search_windows", "search_images", "search_all"];

/// Hybrid search restricted to one chunk kind, or over all kinds.
pub struct SearchTool {
    name: &'static str,
    kind: Option<ChunkKind>,
    index: Arc<Index>,
    fusion: FusionConfig,
}

impl SearchTool {
    pub fn new(name: &'static str, kind: Option<ChunkKind>, index: Arc<Index>, fusion: FusionConfig) -> Self {
        SearchTool {
            name,
            kind,
            index,
            fusion,
        }
    }
}

pub fn hit_to_result_chunk(hit: &SearchHit) -> ResultChunk {
    let c = &hit.chunk;
    ResultChunk {
        chunk_id: c.chunk_id.clone(),
        kind: c.kind,
        sheet: c.sheet.clone(),
        location: c.location(),
        row_span: c.row_span,
        col_span: c.col_span,
        headers: c.headers.clone(),
        text: c.text.clone(),
        score: hit.rrf_score,
        image: c.image.as_ref().map(|img| ImageContent::Inline {
            image_id: img.image_id.clone(),
            encoding: img.encoding.clone(),
            alt_text: img.alt_text.clone(),
            payload: img.payload.clone(),
        }),
    }
}

impl Tool for SearchTool {
    fn schema(&self) -> ToolSchema {
        let what = match self.kind {
            Some(ChunkKind::Row) => "row chunks (one spreadsheet row each)",
            Some(ChunkKind::Column) => "column chunks (one spreadsheet column each)",
            Some(ChunkKind::Window) => "window chunks (rectangular cell blocks)",
            Some(ChunkKind::Image) => "embedded images by alt text and caption",
            None => "all chunk kinds at once",
        };
        ToolSchema {
            name: self.name.to_string(),
            description: format!("Hybrid dense + keyword search over {what}; returns the top-K chunks with metadata."),
            parameters: vec![
                ParamSpec::required("query", ParamType::String, "search text"),
                ParamSpec::optional("K", ParamType::Integer, "number of chunks to return (default 10)"),
                ParamSpec::optional("row", ParamType::Integer, "only chunks covering this 1-based row"),
                ParamSpec::optional("col", ParamType::Integer, "only chunks covering this 1-based column"),
            ],
        }
    }

    fn call(&self, a: &Map<String, Value>) -> Result<ToolOutput, ToolError> {
        let query = args::string(a, "query")?;
        let k = args::opt_u32(a, "K")?.map_or(self.fusion.top_k, |k| k as usize);
        let filter = SearchFilter {
            kind: self.kind,
            row: args::opt_u32(a, "row")?,
            col: args::opt_u32(a, "col")?,
        };
        let config = self.fusion.with_top_k(k);
        let hits = self.index.hybrid_search(&query, &filter, &config);
        Ok(ToolOutput {
            chunks: hits.iter().map(hit_to_result_chunk).collect(),
            ..Default::default()
        })
    }
}

/// The five search tools bound to one index.
pub fn register_search_tools(index: Arc<Index>, fusion: FusionConfig) -> ToolRegistry {
    let mut reg = ToolRegistry::new();
    add_search_tools(&mut reg, index, fusion);
    reg
}

pub fn add_search_tools(reg: &mut ToolRegistry, index: Arc<Index>, fusion: FusionConfig) {
    let kinds = [
        Some(ChunkKind::Row),
        Some(ChunkKind::Column),
        Some(ChunkKind::Window),
        Some(ChunkKind::Image),
        None,
    ];
    for (name, kind) in SEARCH_TOOL_NAMES.into_iter().zip(kinds) {
        reg.register(Arc::new(SearchTool::new(name, kind, index.clone(), fusion)));
    }
}
