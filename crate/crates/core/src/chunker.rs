//! Extraction of row, column, window and image chunks from a workbook.
//!
//! Every chunk carries its provenance (workbook, sheet, inclusive row and
//! column spans) and a deterministic text rendering of the region:
//!
//! ```text
//! sheet=P&L row=A2:B2 | Region=EMEA | Revenue=120
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workbook::{column_letters, CellKind, CellRange, Sheet, Workbook};

pub const TRUNCATION_MARKER: &str = "…[truncated]";

#[derive(Debug, Error, PartialEq)]
pub enum ChunkError {
    #[error("invalid chunk config: {0}")]
    InvalidConfig(String),
    #[error("{kind} {span} in sheet `{sheet}` has {cells} cells (limit {limit})")]
    ChunkTooLarge {
        sheet: String,
        kind: ChunkKind,
        span: String,
        cells: usize,
        limit: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChunkKind {
    Row,
    Column,
    Window,
    Image,
}

impl ChunkKind {
    pub const ALL: [ChunkKind; 4] = [ChunkKind::Row, ChunkKind::Column, ChunkKind::Window, ChunkKind::Image];

    pub fn as_str(self) -> &'static str {
        match self {
            ChunkKind::Row => "row",
            ChunkKind::Column => "column",
            ChunkKind::Window => "window",
            ChunkKind::Image => "image",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl std::fmt::Display for ChunkKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Image payload carried by an image chunk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkImage {
    pub image_id: String,
    pub encoding: String,
    pub alt_text: String,
    #[serde(with = "crate::util::base64_bytes")]
    pub payload: Vec<u8>,
}

/// A cell value inside a chunk; `numeric` keeps the parsed value when the
/// rendered text uses the raw display string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkCell {
    pub row: u32,
    pub col: u32,
    pub raw: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numeric: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub kind: ChunkKind,
    pub workbook_id: String,
    pub sheet: String,
    pub row_span: (u32, u32),
    pub col_span: (u32, u32),
    pub headers: Vec<String>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cells: Vec<ChunkCell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ChunkImage>,
}

impl Chunk {
    pub fn range(&self) -> CellRange {
        CellRange::new(self.row_span.0, self.col_span.0, self.row_span.1, self.col_span.1)
    }

    /// `Sheet!A1:B2` style location used in traces and prompts.
    pub fn location(&self) -> String {
        format!("{}!{}", self.sheet, self.range())
    }

    pub fn contains_row(&self, row: u32) -> bool {
        (self.row_span.0..=self.row_span.1).contains(&row)
    }

    pub fn contains_col(&self, col: u32) -> bool {
        (self.col_span.0..=self.col_span.1).contains(&col)
    }

    pub fn validate(&self) -> Result<(), String> {
        if (self.kind == ChunkKind::Image) != self.image.is_some() {
            return Err(format!("{}: image payload must be present iff kind=image", self.chunk_id));
        }
        if self.row_span.0 == 0 || self.col_span.0 == 0 || self.row_span.0 > self.row_span.1 || self.col_span.0 > self.col_span.1 {
            return Err(format!("{}: invalid spans", self.chunk_id));
        }
        if self.kind == ChunkKind::Row && self.row_span.0 != self.row_span.1 {
            return Err(format!("{}: row chunk spans several rows", self.chunk_id));
        }
        if self.kind == ChunkKind::Column && self.col_span.0 != self.col_span.1 {
            return Err(format!("{}: column chunk spans several columns", self.chunk_id));
        }
        if self.kind != ChunkKind::Image && self.text.is_empty() {
            return Err(format!("{}: empty text", self.chunk_id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkConfig {
    pub window_rows: u32,
    pub window_cols: u32,
    pub window_stride_rows: u32,
    pub window_stride_cols: u32,
    pub header_row_count: u32,
    pub max_cells_per_chunk: usize,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        ChunkConfig {
            window_rows: 16,
            window_cols: 8,
            window_stride_rows: 8,
            window_stride_cols: 4,
            header_row_count: 1,
            max_cells_per_chunk: 4096,
        }
    }
}

impl ChunkConfig {
    pub fn validate(&self) -> Result<(), ChunkError> {
        let positive = [
            self.window_rows,
            self.window_cols,
            self.window_stride_rows,
            self.window_stride_cols,
            self.header_row_count,
        ];
        if positive.iter().any(|&v| v == 0) || self.max_cells_per_chunk == 0 {
            return Err(ChunkError::InvalidConfig("all sizes must be positive".into()));
        }
        if self.window_stride_rows > self.window_rows || self.window_stride_cols > self.window_cols {
            return Err(ChunkError::InvalidConfig("strides must not exceed window sizes".into()));
        }
        Ok(())
    }
}

/// Renders `sheet=<name> <kind>=<span> | key=value | ...`. Returns an empty
/// string when there are no items.
pub fn serialize_chunk_text(sheet: &str, kind: ChunkKind, span: CellRange, items: &[(String, String)]) -> String {
    if items.is_empty() {
        return String::new();
    }
    let mut out = format!("sheet={sheet} {kind}={span}");
    for (k, v) in items {
        out.push_str(" | ");
        out.push_str(k);
        out.push('=');
        out.push_str(v);
    }
    out
}

/// Column headers for a sheet: the joined text of the header rows per column,
/// or column letters when the header rows are empty or purely numeric.
pub fn sheet_headers(sheet: &Sheet, config: &ChunkConfig) -> Vec<String> {
    let n_cols = sheet.n_cols();
    let header_rows = 1..=config.header_row_count.min(sheet.n_rows());
    let header_cells: Vec<_> = sheet
        .cells()
        .filter(|((r, _), _)| header_rows.contains(r))
        .collect();
    let numeric_only = header_cells.iter().all(|(_, v)| match v.kind {
        CellKind::Number | CellKind::Datetime | CellKind::Boolean => true,
        CellKind::Formula => v.numeric.is_some(),
        _ => false,
    });
    (1..=n_cols)
        .map(|c| {
            if numeric_only {
                return column_letters(c as u64);
            }
            let joined: Vec<&str> = header_cells
                .iter()
                .filter(|((_, col), _)| *col == c)
                .map(|(_, v)| v.raw.trim())
                .filter(|s| !s.is_empty())
                .collect();
            if joined.is_empty() {
                column_letters(c as u64)
            } else {
                joined.join(" ")
            }
        })
        .collect()
}

fn chunk_id(workbook_id: &str, sheet: &str, kind: ChunkKind, coords: &str) -> String {
    format!("{workbook_id}/{sheet}/{kind}/{coords}")
}

fn cell_display(v: &crate::workbook::CellValue) -> String {
    match v.kind {
        CellKind::Formula if v.raw.is_empty() => v.formula_text.clone().unwrap_or_default(),
        _ => v.raw.clone(),
    }
}

struct SheetView<'a> {
    workbook_id: &'a str,
    sheet: &'a Sheet,
    headers: Vec<String>,
    config: &'a ChunkConfig,
}

impl SheetView<'_> {
    fn header(&self, col: u32) -> String {
        self.headers
            .get(col as usize - 1)
            .cloned()
            .unwrap_or_else(|| column_letters(col as u64))
    }

    fn span_headers(&self, cols: (u32, u32)) -> Vec<String> {
        (cols.0..=cols.1).map(|c| self.header(c)).collect()
    }

    fn region_cells(&self, range: CellRange) -> Vec<ChunkCell> {
        self.sheet
            .cells()
            .filter(|((r, c), _)| range.contains(*r, *c))
            .map(|((row, col), v)| ChunkCell {
                row,
                col,
                raw: cell_display(v),
                numeric: v.numeric,
            })
            .filter(|c| !c.raw.is_empty())
            .collect()
    }

    /// Builds the chunk for a region. Returns `None` for regions without content.
    fn region_chunk(&self, kind: ChunkKind, range: CellRange) -> Result<Option<Chunk>, ChunkError> {
        let mut cells = self.region_cells(range);
        if cells.is_empty() {
            return Ok(None);
        }
        let limit = self.config.max_cells_per_chunk;
        let truncated = cells.len() > limit;
        if truncated {
            if kind != ChunkKind::Window {
                return Err(ChunkError::ChunkTooLarge {
                    sheet: self.sheet.name.clone(),
                    kind,
                    span: range.to_string(),
                    cells: cells.len(),
                    limit,
                });
            }
            cells.truncate(limit);
        }
        let header_rows = self.config.header_row_count;
        let items: Vec<(String, String)> = cells
            .iter()
            .map(|c| {
                let key = if kind == ChunkKind::Row && c.row > header_rows {
                    self.header(c.col)
                } else {
                    crate::workbook::a1_ref(c.row as i64, c.col as i64).unwrap()
                };
                (key, c.raw.clone())
            })
            .collect();
        let mut text = serialize_chunk_text(&self.sheet.name, kind, range, &items);
        if truncated {
            text.push_str(" | ");
            text.push_str(TRUNCATION_MARKER);
        }
        let headers = self.span_headers((range.start_col, range.end_col));
        Ok(Some(Chunk {
            chunk_id: chunk_id(self.workbook_id, &self.sheet.name, kind, &range.to_string()),
            kind,
            workbook_id: self.workbook_id.to_string(),
            sheet: self.sheet.name.clone(),
            row_span: (range.start_row, range.end_row),
            col_span: (range.start_col, range.end_col),
            headers,
            text,
            cells,
            image: None,
        }))
    }
}

/// Tiling starts along one axis: 1, 1+stride, ... until a window reaches `len`.
fn window_starts(len: u32, window: u32, stride: u32) -> Vec<u32> {
    let mut out = Vec::new();
    if len == 0 {
        return out;
    }
    let mut s = 1;
    loop {
        out.push(s);
        if s + window - 1 >= len {
            break;
        }
        s += stride;
    }
    out
}

fn chunk_sheet(workbook_id: &str, sheet: &Sheet, config: &ChunkConfig) -> Result<Vec<Chunk>, ChunkError> {
    let view = SheetView {
        workbook_id,
        sheet,
        headers: sheet_headers(sheet, config),
        config,
    };
    let mut out = Vec::new();

    let mut row_extent: std::collections::BTreeMap<u32, (u32, u32)> = Default::default();
    let mut col_extent: std::collections::BTreeMap<u32, (u32, u32)> = Default::default();
    for ((r, c), v) in sheet.cells() {
        if cell_display(v).is_empty() {
            continue;
        }
        let e = row_extent.entry(r).or_insert((c, c));
        e.0 = e.0.min(c);
        e.1 = e.1.max(c);
        let e = col_extent.entry(c).or_insert((r, r));
        e.0 = e.0.min(r);
        e.1 = e.1.max(r);
    }
    for (&r, &(c0, c1)) in &row_extent {
        out.extend(view.region_chunk(ChunkKind::Row, CellRange::new(r, c0, r, c1))?);
    }
    for (&c, &(r0, r1)) in &col_extent {
        out.extend(view.region_chunk(ChunkKind::Column, CellRange::new(r0, c, r1, c))?);
    }
    for r0 in window_starts(sheet.n_rows(), config.window_rows, config.window_stride_rows) {
        for c0 in window_starts(sheet.n_cols(), config.window_cols, config.window_stride_cols) {
            let r1 = (r0 + config.window_rows - 1).min(sheet.n_rows());
            let c1 = (c0 + config.window_cols - 1).min(sheet.n_cols());
            out.extend(view.region_chunk(ChunkKind::Window, CellRange::new(r0, c0, r1, c1))?);
        }
    }
    for img in &sheet.images {
        let at = crate::workbook::a1_ref(img.row as i64, img.col as i64).unwrap();
        let caption = format!("image at {}!{at}", sheet.name);
        let text = if img.alt_text.trim().is_empty() {
            caption
        } else {
            format!("{}\n{caption}", img.alt_text)
        };
        out.push(Chunk {
            chunk_id: chunk_id(workbook_id, &sheet.name, ChunkKind::Image, &format!("{at}/{}", img.image_id)),
            kind: ChunkKind::Image,
            workbook_id: workbook_id.to_string(),
            sheet: sheet.name.clone(),
            row_span: (img.row, img.row),
            col_span: (img.col, img.col),
            headers: Vec::new(),
            text,
            cells: Vec::new(),
            image: Some(ChunkImage {
                image_id: img.image_id.clone(),
                encoding: img.encoding.clone(),
                alt_text: img.alt_text.clone(),
                payload: img.payload.clone(),
            }),
        });
    }
    Ok(out)
}

/// Extracts all chunks, sorted by `chunk_id`.
pub fn chunk_workbook(workbook: &Workbook, config: &ChunkConfig) -> Result<Vec<Chunk>, ChunkError> {
    config.validate()?;
    let per_sheet: Vec<Vec<Chunk>> = workbook
        .sheets
        .par_iter()
        .map(|s| chunk_sheet(&workbook.workbook_id, s, config))
        .collect::<Result<_, _>>()?;
    let mut chunks: Vec<Chunk> = per_sheet.into_iter().flatten().collect();
    chunks.sort_by(|a, b| a.chunk_id.cmp(&b.chunk_id));
    Ok(chunks)
}

/// Re-renders the text of a non-image chunk from the workbook region it
/// points at. Used to audit provenance.
pub fn rerender(workbook: &Workbook, chunk: &Chunk, config: &ChunkConfig) -> Option<String> {
    let sheet = workbook.sheet(&chunk.sheet)?;
    let view = SheetView {
        workbook_id: &workbook.workbook_id,
        sheet,
        headers: sheet_headers(sheet, config),
        config,
    };
    view.region_chunk(chunk.kind, chunk.range()).ok().flatten().map(|c| c.text)
}
