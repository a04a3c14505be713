//! In-memory spreadsheet model, A1 coordinate utilities and file ingestion.
//!
//! Two on-disk formats are understood: the canonical JSON workbook document
//! (see [`canonical`]) which every test fixture uses, and best-effort OOXML
//! (`.xlsx`) ingestion via [`xlsx`].

mod a1;
pub mod canonical;
pub mod xlsx;
mod xlsx_write;

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use a1::{a1_ref, column_letters, column_number, parse_a1, parse_range, CellRange, RangeRef};
pub use canonical::{ingest_canonical, parse_canonical, to_canonical_json, write_canonical};
pub use xlsx::{ingest_xlsx, IngestOutcome};
pub use xlsx_write::{to_xlsx_bytes, write_xlsx};

/// Largest row index accepted by the OOXML grid.
pub const MAX_ROWS: u32 = 1_048_576;
/// Largest column index accepted by the OOXML grid (`XFD`).
pub const MAX_COLS: u32 = 16_384;

#[derive(Debug, Error)]
pub enum WorkbookError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("malformed workbook: {0}")]
    MalformedWorkbook(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("invalid coordinate (row={row}, col={col})")]
    InvalidCoordinate { row: i64, col: i64 },
    #[error("invalid cell reference `{0}`")]
    InvalidReference(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = WorkbookError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Empty,
    Text,
    Number,
    Boolean,
    Datetime,
    Formula,
}

impl CellKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::Empty => "empty",
            CellKind::Text => "text",
            CellKind::Number => "number",
            CellKind::Boolean => "boolean",
            CellKind::Datetime => "datetime",
            CellKind::Formula => "formula",
        }
    }
}

/// One cell. For formula cells `raw` holds the cached display value and
/// `numeric` the cached numeric result, if any; `eval_error` is set when the
/// cached value is an evaluation error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellValue {
    pub kind: CellKind,
    pub raw: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numeric: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formula_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_error: Option<String>,
}

impl CellValue {
    pub fn empty() -> Self {
        CellValue {
            kind: CellKind::Empty,
            raw: String::new(),
            numeric: None,
            formula_text: None,
            eval_error: None,
        }
    }

    pub fn text(s: impl Into<String>) -> Self {
        CellValue {
            kind: CellKind::Text,
            raw: s.into(),
            ..Self::empty()
        }
    }

    pub fn number(n: f64) -> Self {
        Self::number_with_raw(format_number(n), n)
    }

    /// Number whose display text differs from its value, e.g. `"1,200.00"`.
    pub fn number_with_raw(raw: impl Into<String>, n: f64) -> Self {
        CellValue {
            kind: CellKind::Number,
            raw: raw.into(),
            numeric: Some(n),
            ..Self::empty()
        }
    }

    pub fn boolean(b: bool) -> Self {
        CellValue {
            kind: CellKind::Boolean,
            raw: if b { "TRUE" } else { "FALSE" }.to_string(),
            numeric: Some(if b { 1.0 } else { 0.0 }),
            ..Self::empty()
        }
    }

    /// Date/time cell: ISO-8601 text plus the 1900-system serial number.
    pub fn datetime(iso: impl Into<String>, serial: f64) -> Self {
        CellValue {
            kind: CellKind::Datetime,
            raw: iso.into(),
            numeric: Some(serial),
            ..Self::empty()
        }
    }

    /// Unevaluated formula. `text` must start with `=`.
    pub fn formula(text: impl Into<String>) -> Self {
        CellValue {
            kind: CellKind::Formula,
            raw: String::new(),
            formula_text: Some(text.into()),
            ..Self::empty()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.kind == CellKind::Empty || (self.kind != CellKind::Formula && self.raw.is_empty())
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        match self.kind {
            CellKind::Number => match self.numeric {
                Some(n) if n.is_finite() => {}
                _ => return Err("number cell requires a finite numeric value".into()),
            },
            CellKind::Formula => match &self.formula_text {
                Some(f) if f.starts_with('=') => {}
                _ => return Err("formula cell requires formula_text starting with '='".into()),
            },
            _ => {
                if self.formula_text.is_some() {
                    return Err("formula_text present on a non-formula cell".into());
                }
            }
        }
        if let Some(n) = self.numeric {
            if !n.is_finite() {
                return Err("non-finite numeric value".into());
            }
        }
        Ok(())
    }
}

/// Plain numeric rendering used for cells created from values.
pub fn format_number(n: f64) -> String {
    if n == n.trunc() && n.abs() < 1e15 {
        format!("{}", n as i64)
    } else {
        format!("{n}")
    }
}

/// Formatting metadata only; nothing is rendered.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellFormat {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub number_format: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub bold: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fill: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddedImage {
    pub image_id: String,
    pub sheet: String,
    pub row: u32,
    pub col: u32,
    pub payload: Vec<u8>,
    pub encoding: String,
    pub alt_text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sheet {
    pub name: String,
    cells: BTreeMap<(u32, u32), CellValue>,
    pub formats: BTreeMap<(u32, u32), CellFormat>,
    pub images: Vec<EmbeddedImage>,
    n_rows: u32,
    n_cols: u32,
}

impl Sheet {
    pub fn new(name: impl Into<String>) -> Self {
        Sheet {
            name: name.into(),
            cells: BTreeMap::new(),
            formats: BTreeMap::new(),
            images: Vec::new(),
            n_rows: 0,
            n_cols: 0,
        }
    }

    pub fn n_rows(&self) -> u32 {
        self.n_rows
    }

    pub fn n_cols(&self) -> u32 {
        self.n_cols
    }

    /// Non-empty cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = ((u32, u32), &CellValue)> {
        self.cells.iter().map(|(k, v)| (*k, v))
    }

    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }

    pub fn get(&self, row: u32, col: u32) -> Option<&CellValue> {
        self.cells.get(&(row, col))
    }

    /// Stores a cell; empty values remove it. Coordinates are 1-based.
    pub fn set(&mut self, row: u32, col: u32, value: CellValue) -> Result<()> {
        check_coord(row, col)?;
        if value.is_empty() {
            self.cells.remove(&(row, col));
            self.recompute_bounds();
        } else {
            self.cells.insert((row, col), value);
            self.n_rows = self.n_rows.max(row);
            self.n_cols = self.n_cols.max(col);
        }
        Ok(())
    }

    pub fn add_image(&mut self, image: EmbeddedImage) -> Result<()> {
        check_coord(image.row, image.col)?;
        if image.payload.is_empty() {
            return Err(WorkbookError::MalformedWorkbook(format!(
                "image `{}` has an empty payload",
                image.image_id
            )));
        }
        self.n_rows = self.n_rows.max(image.row);
        self.n_cols = self.n_cols.max(image.col);
        self.images.push(image);
        Ok(())
    }

    fn recompute_bounds(&mut self) {
        let cells = self.cells.keys().copied();
        let images = self.images.iter().map(|i| (i.row, i.col));
        let (r, c) = cells
            .chain(images)
            .fold((0, 0), |(r, c), (row, col)| (r.max(row), c.max(col)));
        self.n_rows = r;
        self.n_cols = c;
    }
}

fn check_coord(row: u32, col: u32) -> Result<()> {
    if row == 0 || col == 0 || row > MAX_ROWS || col > MAX_COLS {
        return Err(WorkbookError::InvalidCoordinate {
            row: row as i64,
            col: col as i64,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Workbook {
    pub workbook_id: String,
    pub sheets: Vec<Sheet>,
}

impl Workbook {
    pub fn new(workbook_id: impl Into<String>, sheets: Vec<Sheet>) -> Result<Self> {
        let wb = Workbook {
            workbook_id: workbook_id.into(),
            sheets,
        };
        wb.validate()?;
        Ok(wb)
    }

    pub fn sheet(&self, name: &str) -> Option<&Sheet> {
        self.sheets.iter().find(|s| s.name == name)
    }

    pub fn sheet_mut(&mut self, name: &str) -> Option<&mut Sheet> {
        self.sheets.iter_mut().find(|s| s.name == name)
    }

    pub fn total_images(&self) -> usize {
        self.sheets.iter().map(|s| s.images.len()).sum()
    }

    pub fn total_cells(&self) -> usize {
        self.sheets.iter().map(|s| s.cells.len()).sum()
    }

    pub fn find_image(&self, image_id: &str) -> Option<&EmbeddedImage> {
        self.sheets
            .iter()
            .flat_map(|s| s.images.iter())
            .find(|i| i.image_id == image_id)
    }

    pub fn validate(&self) -> Result<()> {
        let malformed = |m: String| Err(WorkbookError::MalformedWorkbook(m));
        if self.sheets.is_empty() {
            return malformed("workbook has no sheets".into());
        }
        let mut names = HashSet::new();
        let mut image_ids = HashSet::new();
        for sheet in &self.sheets {
            if !names.insert(sheet.name.as_str()) {
                return malformed(format!("duplicate sheet name `{}`", sheet.name));
            }
            for ((r, c), cell) in sheet.cells() {
                if r > sheet.n_rows || c > sheet.n_cols {
                    return malformed(format!("cell ({r},{c}) outside sheet bounds"));
                }
                if let Err(e) = cell.validate() {
                    return malformed(format!("{}!{}: {e}", sheet.name, a1::a1(r, c)));
                }
            }
            for img in &sheet.images {
                if !image_ids.insert(img.image_id.as_str()) {
                    return malformed(format!("duplicate image id `{}`", img.image_id));
                }
                if img.sheet != sheet.name {
                    return malformed(format!(
                        "image `{}` anchored to sheet `{}` but stored under `{}`",
                        img.image_id, img.sheet, sheet.name
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Excel 1900-system serial number for a date/time.
pub fn excel_serial(dt: chrono::NaiveDateTime) -> f64 {
    let epoch = chrono::NaiveDate::from_ymd_opt(1899, 12, 30)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    let secs = (dt - epoch).num_seconds() as f64;
    let serial = secs / 86_400.0;
    // serials before 1900-03-01 are shifted by the phantom 1900-02-29
    if serial < 61.0 {
        serial - 1.0
    } else {
        serial
    }
}

/// Inverse of [`excel_serial`]; returns ISO-8601 text (date only when the
/// serial has no time component).
pub fn serial_to_iso(serial: f64) -> Option<String> {
    if !serial.is_finite() || serial < 0.0 {
        return None;
    }
    let adjusted = if serial < 61.0 { serial + 1.0 } else { serial };
    let epoch = chrono::NaiveDate::from_ymd_opt(1899, 12, 30)?.and_hms_opt(0, 0, 0)?;
    let secs = (adjusted * 86_400.0).round() as i64;
    let dt = epoch + chrono::Duration::seconds(secs);
    if secs % 86_400 == 0 {
        Some(dt.format("%Y-%m-%d").to_string())
    } else {
        Some(dt.format("%Y-%m-%dT%H:%M:%S").to_string())
    }
}

/// Parses `YYYY-MM-DD` or `YYYY-MM-DDTHH:MM:SS`.
pub fn parse_iso(raw: &str) -> Option<chrono::NaiveDateTime> {
    let raw = raw.trim();
    if let Ok(dt) = chrono::NaiveDateTime::parse_from_str(raw, "%Y-%m-%dT%H:%M:%S") {
        return Some(dt);
    }
    if let Ok(dt) = chrono::NaiveDateTime::parse_from_str(raw, "%Y-%m-%d %H:%M:%S") {
        return Some(dt);
    }
    chrono::NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

/// Reads a workbook from either format, chosen by extension.
pub fn ingest_path(path: &std::path::Path) -> Result<Workbook> {
    let name = path.to_string_lossy().to_ascii_lowercase();
    if name.ends_with(".xlsx") {
        ingest_xlsx(path).map(IngestOutcome::into_workbook)
    } else {
        ingest_canonical(path)
    }
}
