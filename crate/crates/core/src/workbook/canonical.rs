//! Canonical workbook document (`*.wb.json`), `format_version: 1`.
//!
//! ```json
//! {"format_version": 1, "workbook_id": "toy",
//!  "sheets": [{"name": "S",
//!              "cells": [{"row": 1, "col": 1, "kind": "text", "raw": "x"}],
//!              "images": [{"image_id": "img1", "row": 2, "col": 2, "encoding": "image/png",
//!                          "payload_base64": "...", "alt_text": ""}]}]}
//! ```

use std::path::Path;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    excel_serial, parse_iso, CellFormat, CellKind, CellValue, EmbeddedImage, Result, Sheet,
    Workbook, WorkbookError,
};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocWorkbook {
    format_version: u32,
    #[serde(default)]
    workbook_id: Option<String>,
    sheets: Vec<DocSheet>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocSheet {
    name: String,
    #[serde(default)]
    cells: Vec<DocCell>,
    #[serde(default)]
    images: Vec<DocImage>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    formats: Vec<DocFormat>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocCell {
    row: u32,
    col: u32,
    kind: CellKind,
    #[serde(default)]
    raw: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    numeric: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    formula_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eval_error: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DocImage {
    image_id: String,
    row: u32,
    col: u32,
    encoding: String,
    payload_base64: String,
    #[serde(default)]
    alt_text: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct DocFormat {
    row: u32,
    col: u32,
    #[serde(flatten)]
    format: CellFormat,
}

/// Reads a canonical workbook file.
pub fn ingest_canonical(path: &Path) -> Result<Workbook> {
    if !path.exists() {
        return Err(WorkbookError::FileNotFound(path.to_path_buf()));
    }
    let bytes = std::fs::read(path)?;
    let stem = path
        .file_name()
        .and_then(|n| n.to_str())
        .map(|n| n.trim_end_matches(".json").trim_end_matches(".wb"))
        .unwrap_or("workbook");
    parse_canonical(&bytes, stem)
}

/// Parses canonical bytes. `name_hint` seeds the derived id when the document
/// carries none.
pub fn parse_canonical(bytes: &[u8], name_hint: &str) -> Result<Workbook> {
    let malformed = |m: String| WorkbookError::MalformedWorkbook(m);
    let doc: DocWorkbook =
        serde_json::from_slice(bytes).map_err(|e| malformed(format!("invalid document: {e}")))?;
    if doc.format_version != FORMAT_VERSION {
        return Err(WorkbookError::UnsupportedFormat(format!(
            "format_version {} (expected {FORMAT_VERSION})",
            doc.format_version
        )));
    }
    let workbook_id = match doc.workbook_id {
        Some(id) if !id.trim().is_empty() => id,
        _ => derive_workbook_id(name_hint, bytes),
    };

    let mut sheets = Vec::with_capacity(doc.sheets.len());
    for ds in doc.sheets {
        let mut sheet = Sheet::new(ds.name.clone());
        for c in ds.cells {
            if c.row == 0 || c.col == 0 || c.row > super::MAX_ROWS || c.col > super::MAX_COLS {
                return Err(malformed(format!(
                    "cell ({}, {}) in sheet `{}` is out of bounds",
                    c.row, c.col, ds.name
                )));
            }
            if sheet.get(c.row, c.col).is_some() {
                return Err(malformed(format!(
                    "duplicate cell ({}, {}) in sheet `{}`",
                    c.row, c.col, ds.name
                )));
            }
            let mut numeric = c.numeric;
            if c.kind == CellKind::Datetime && numeric.is_none() {
                numeric = parse_iso(&c.raw).map(excel_serial);
            }
            let value = CellValue {
                kind: c.kind,
                raw: c.raw,
                numeric,
                formula_text: c.formula_text,
                eval_error: c.eval_error,
            };
            value
                .validate()
                .map_err(|e| malformed(format!("cell ({}, {}) in `{}`: {e}", c.row, c.col, ds.name)))?;
            sheet.set(c.row, c.col, value)?;
        }
        for f in ds.formats {
            sheet.formats.insert((f.row, f.col), f.format);
        }
        for img in ds.images {
            let payload = base64::engine::general_purpose::STANDARD
                .decode(img.payload_base64.as_bytes())
                .map_err(|e| malformed(format!("image `{}`: bad base64: {e}", img.image_id)))?;
            sheet
                .add_image(EmbeddedImage {
                    image_id: img.image_id,
                    sheet: ds.name.clone(),
                    row: img.row,
                    col: img.col,
                    payload,
                    encoding: img.encoding,
                    alt_text: img.alt_text,
                })
                .map_err(|e| match e {
                    WorkbookError::InvalidCoordinate { row, col } => {
                        malformed(format!("image anchor ({row}, {col}) out of bounds"))
                    }
                    other => other,
                })?;
        }
        sheets.push(sheet);
    }
    Workbook::new(workbook_id, sheets)
}

/// `<stem>-<first 12 hex digits of sha256(content)>`.
pub fn derive_workbook_id(stem: &str, bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    format!("{stem}-{hex}")
}

/// Serializes a workbook to the canonical document (pretty JSON, cells in
/// row-major order).
pub fn to_canonical_json(wb: &Workbook) -> String {
    let doc = DocWorkbook {
        format_version: FORMAT_VERSION,
        workbook_id: Some(wb.workbook_id.clone()),
        sheets: wb
            .sheets
            .iter()
            .map(|s| DocSheet {
                name: s.name.clone(),
                cells: s
                    .cells()
                    .map(|((row, col), v)| DocCell {
                        row,
                        col,
                        kind: v.kind,
                        raw: v.raw.clone(),
                        numeric: v.numeric,
                        formula_text: v.formula_text.clone(),
                        eval_error: v.eval_error.clone(),
                    })
                    .collect(),
                images: s
                    .images
                    .iter()
                    .map(|i| DocImage {
                        image_id: i.image_id.clone(),
                        row: i.row,
                        col: i.col,
                        encoding: i.encoding.clone(),
                        payload_base64: base64::engine::general_purpose::STANDARD.encode(&i.payload),
                        alt_text: i.alt_text.clone(),
                    })
                    .collect(),
                formats: s
                    .formats
                    .iter()
                    .map(|(&(row, col), f)| DocFormat {
                        row,
                        col,
                        format: f.clone(),
                    })
                    .collect(),
            })
            .collect(),
    };
    let mut out = serde_json::to_string_pretty(&doc).expect("workbook serializes");
    out.push('\n');
    out
}

/// Writes the canonical document atomically (temp file + rename).
pub fn write_canonical(wb: &Workbook, path: &Path) -> Result<()> {
    crate::util::atomic_write(path, to_canonical_json(wb).as_bytes())?;
    Ok(())
}
