use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::formula::evaluate_workbook;
use super::ExecError;
use crate::util::atomic_write;
use crate::workbook::{
    a1_ref, ingest_path, parse_canonical, parse_range, to_canonical_json, CellFormat, CellRange, CellValue, Sheet,
    Workbook, MAX_COLS, MAX_ROWS,
};

/// Largest range `excel_read_range` will materialize.
pub const MAX_READ_CELLS: u64 = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellEdit {
    pub sheet: String,
    pub row: u32,
    pub col: u32,
    pub new_value: CellValue,
}

impl CellEdit {
    pub fn new(sheet: impl Into<String>, row: u32, col: u32, new_value: CellValue) -> Self {
        CellEdit {
            sheet: sheet.into(),
            row,
            col,
            new_value,
        }
    }

    pub fn validate(&self) -> Result<(), ExecError> {
        if self.row < 1 || self.col < 1 || self.row > MAX_ROWS || self.col > MAX_COLS {
            return Err(ExecError::InvalidEdit(format!(
                "{}: coordinates ({}, {}) out of range",
                self.sheet, self.row, self.col
            )));
        }
        if self.sheet.is_empty() {
            return Err(ExecError::InvalidEdit("empty sheet name".into()));
        }
        self.new_value
            .validate()
            .map_err(|e| ExecError::InvalidEdit(format!("{}!{}: {e}", self.sheet, self.label())))
    }

    fn label(&self) -> String {
        a1_ref(self.row as i64, self.col as i64).unwrap_or_default()
    }
}

/// Dense, row-major block of cells covering exactly `range`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub sheet: String,
    pub range: CellRange,
    pub rows: Vec<Vec<CellValue>>,
}

impl Grid {
    pub fn values(&self) -> impl Iterator<Item = &CellValue> {
        self.rows.iter().flatten()
    }
}

/// Where the canonical copy of an `.xlsx` workbook is kept: `book.xlsx` →
/// `book.wb.json` in the same directory.
pub fn canonical_sibling(path: &Path) -> Option<PathBuf> {
    if !is_xlsx(path) {
        return None;
    }
    let stem = path.file_stem()?.to_string_lossy().into_owned();
    Some(path.with_file_name(format!("{stem}.wb.json")))
}

fn is_xlsx(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("xlsx"))
}

/// Loads a workbook for editing or reading. For `.xlsx` paths the
/// canonical sibling written by [`excel_write`] is preferred because it
/// keeps formatting metadata.
pub fn load_workbook(path: &Path) -> Result<Workbook, ExecError> {
    if let Some(sib) = canonical_sibling(path).filter(|p| p.is_file()) {
        let bytes = std::fs::read(&sib)?;
        return Ok(parse_canonical(&bytes, &stem_of(path))?);
    }
    if !path.exists() {
        return Err(ExecError::FileNotFound(path.to_path_buf()));
    }
    Ok(ingest_path(path)?)
}

fn stem_of(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let name = name.strip_suffix(".json").unwrap_or(&name);
    let name = name.strip_suffix(".wb").unwrap_or(name);
    let name = name.strip_suffix(".xlsx").unwrap_or(name);
    if name.is_empty() {
        "workbook".into()
    } else {
        name.to_string()
    }
}

fn resolve_range(sheet: Option<&str>, a1_range: &str) -> Result<(String, CellRange), ExecError> {
    let r = parse_range(a1_range).map_err(|e| ExecError::BadRange(format!("{a1_range}: {e}")))?;
    let sheet = match (r.sheet, sheet) {
        (Some(s), Some(given)) if s != given => {
            return Err(ExecError::BadRange(format!("{a1_range} names sheet {s}, expected {given}")))
        }
        (Some(s), _) => s,
        (None, Some(given)) => given.to_string(),
        (None, None) => return Err(ExecError::BadRange(format!("{a1_range}: no sheet given"))),
    };
    Ok((sheet, r.range))
}

pub fn read_range(wb: &Workbook, sheet: Option<&str>, a1_range: &str) -> Result<Grid, ExecError> {
    let (sheet, range) = resolve_range(sheet, a1_range)?;
    let s = wb.sheet(&sheet).ok_or_else(|| ExecError::SheetNotFound(sheet.clone()))?;
    if range.rows() as u64 * range.cols() as u64 > MAX_READ_CELLS {
        return Err(ExecError::BadRange(format!("{a1_range} exceeds {MAX_READ_CELLS} cells")));
    }
    let rows = (range.start_row..=range.end_row)
        .map(|r| {
            (range.start_col..=range.end_col)
                .map(|c| s.get(r, c).cloned().unwrap_or_else(CellValue::empty))
                .collect()
        })
        .collect();
    Ok(Grid { sheet, range, rows })
}

/// Reads a rectangular range; cells outside the sheet's content are empty.
/// `a1_range` may carry its own sheet qualifier.
pub fn excel_read_range(workbook_path: &Path, sheet: Option<&str>, a1_range: &str) -> Result<Grid, ExecError> {
    read_range(&load_workbook(workbook_path)?, sheet, a1_range)
}

/// Exclusive advisory lock on `<path>.lock`, released on drop.
pub struct FileLock {
    path: PathBuf,
}

impl FileLock {
    pub fn acquire(target: &Path) -> Result<FileLock, ExecError> {
        let mut name = target.as_os_str().to_owned();
        name.push(".lock");
        let path = PathBuf::from(name);
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(FileLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(ExecError::WriteConflict(target.to_path_buf()))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for FileLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WriteReport {
    /// Files written, canonical first.
    pub files: Vec<PathBuf>,
    pub cells_written: usize,
}

/// Writes the workbook to `path`: canonical JSON at `path` itself, or for
/// `.xlsx` targets the XLSX file plus its canonical sibling.
fn persist(wb: &Workbook, path: &Path) -> Result<Vec<PathBuf>, ExecError> {
    let canonical = to_canonical_json(wb);
    match canonical_sibling(path) {
        Some(sib) => {
            let xlsx = crate::workbook::to_xlsx_bytes(wb)?;
            atomic_write(&sib, canonical.as_bytes())?;
            atomic_write(path, &xlsx)?;
            Ok(vec![sib, path.to_path_buf()])
        }
        None => {
            atomic_write(path, canonical.as_bytes())?;
            Ok(vec![path.to_path_buf()])
        }
    }
}

fn open_for_edit(path: &Path, create_if_missing: bool) -> Result<Workbook, ExecError> {
    let exists = path.exists() || canonical_sibling(path).is_some_and(|s| s.exists());
    if exists {
        load_workbook(path)
    } else if create_if_missing {
        Ok(Workbook {
            workbook_id: stem_of(path),
            sheets: Vec::new(),
        })
    } else {
        Err(ExecError::FileNotFound(path.to_path_buf()))
    }
}

fn sheet_entry<'a>(wb: &'a mut Workbook, name: &str) -> &'a mut Sheet {
    if wb.sheet(name).is_none() {
        wb.sheets.push(Sheet::new(name));
    }
    wb.sheet_mut(name).expect("sheet just ensured")
}

/// Applies all edits or none. Formulas are evaluated immediately and their
/// cached values stored. If an edited formula fails to evaluate the file is
/// still written (with the error cached) and `EvalError` is returned.
pub fn excel_write(path: &Path, edits: &[CellEdit], create_if_missing: bool) -> Result<WriteReport, ExecError> {
    for e in edits {
        e.validate()?;
    }
    let _lock = FileLock::acquire(path)?;
    let mut wb = open_for_edit(path, create_if_missing)?;
    for e in edits {
        sheet_entry(&mut wb, &e.sheet).set(e.row, e.col, e.new_value.clone())?;
    }
    if wb.sheets.is_empty() {
        wb.sheets.push(Sheet::new("Sheet1"));
    }
    wb.validate()?;
    let errors = evaluate_workbook(&mut wb);
    let files = persist(&wb, path)?;
    let edited: std::collections::HashSet<String> = edits.iter().map(|e| format!("{}!{}", e.sheet, e.label())).collect();
    if let Some((cell, cause)) = errors.into_iter().find(|(label, _)| edited.contains(label)) {
        return Err(ExecError::EvalError { cell, cause, files });
    }
    Ok(WriteReport {
        files,
        cells_written: edits.len(),
    })
}

/// Stores formatting metadata for every cell of the range.
pub fn excel_format(path: &Path, sheet: Option<&str>, a1_range: &str, format: &CellFormat) -> Result<WriteReport, ExecError> {
    let (sheet, range) = resolve_range(sheet, a1_range)?;
    if range.rows() as u64 * range.cols() as u64 > MAX_READ_CELLS {
        return Err(ExecError::BadRange(format!("{a1_range} exceeds {MAX_READ_CELLS} cells")));
    }
    let _lock = FileLock::acquire(path)?;
    let mut wb = open_for_edit(path, false)?;
    let s = wb.sheet_mut(&sheet).ok_or_else(|| ExecError::SheetNotFound(sheet.clone()))?;
    for (r, c) in range.iter() {
        s.formats.insert((r, c), format.clone());
    }
    let files = persist(&wb, path)?;
    Ok(WriteReport {
        files,
        cells_written: (range.rows() * range.cols()) as usize,
    })
}
