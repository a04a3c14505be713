//! Tools behind the excel, io, validation and ocr executor types.

mod excel;
pub mod formula;
mod io;
mod tools;
mod transcribe;
mod validation;

use std::path::PathBuf;

use thiserror::Error;

use crate::workbook::WorkbookError;

pub use excel::{
    canonical_sibling, excel_format, excel_read_range, excel_write, load_workbook, read_range, CellEdit, FileLock, Grid,
    WriteReport, MAX_READ_CELLS,
};
pub use formula::{eval_formula, evaluate_workbook, parse_formula, FormulaError, Resolver, Value, WorkbookEvaluator};
pub use io::{io_read, io_write, parse_csv, render_csv, IoContent, IoFormat};
pub use tools::{
    cell_to_json, excel_tools, grid_to_json, io_tools, json_to_cell, ocr_tools, validation_tools, web_tools, StubTool,
    ToolContext,
};
pub use transcribe::{transcribe_image, transcribe_with, OcrProvider, StubOcr, Transcription};
pub use validation::{
    balance_sheet_report, check_balance_sheet, check_debit_credit, debit_credit_report, ValidationReport,
    DEFAULT_TOLERANCE,
};

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("sheet `{0}` not found")]
    SheetNotFound(String),
    #[error("bad range: {0}")]
    BadRange(String),
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),
    #[error("another writer holds {}", .0.display())]
    WriteConflict(PathBuf),
    #[error("formula in {cell} failed: {}: {cause}", cause.code())]
    EvalError {
        cell: String,
        cause: FormulaError,
        /// Files written despite the failure.
        files: Vec<PathBuf>,
    },
    #[error("invalid edit: {0}")]
    InvalidEdit(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: u64, column: u64, message: String },
    #[error("cell {0} is not numeric")]
    NonNumericCell(String),
    #[error("image `{0}` not found")]
    ImageNotFound(String),
    #[error(transparent)]
    Workbook(#[from] WorkbookError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
