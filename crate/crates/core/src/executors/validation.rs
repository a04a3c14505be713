use std::path::Path;

use serde::{Deserialize, Serialize};

use super::excel::load_workbook;
use super::formula::{Value, WorkbookEvaluator};
use super::ExecError;
use crate::workbook::{a1_ref, parse_range, CellRange, Workbook};

pub const DEFAULT_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub check_name: String,
    pub passed: bool,
    pub lhs: f64,
    pub rhs: f64,
    pub tolerance: f64,
    pub locations: Vec<String>,
}

impl ValidationReport {
    pub fn new(check_name: &str, lhs: f64, rhs: f64, tolerance: f64, locations: Vec<String>) -> Self {
        ValidationReport {
            check_name: check_name.into(),
            passed: (lhs - rhs).abs() <= tolerance,
            lhs,
            rhs,
            tolerance,
            locations,
        }
    }

    pub fn difference(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }
}

fn check_tolerance(t: f64) -> Result<(), ExecError> {
    if !t.is_finite() || t < 0.0 {
        return Err(ExecError::InvalidArgument(format!("tolerance {t} must be finite and ≥ 0")));
    }
    Ok(())
}

fn target(sheet: &str, reference: &str) -> Result<(String, CellRange), ExecError> {
    let r = parse_range(reference).map_err(|e| ExecError::BadRange(format!("{reference}: {e}")))?;
    Ok((r.sheet.unwrap_or_else(|| sheet.to_string()), r.range))
}

fn label(sheet: &str, row: u32, col: u32) -> String {
    format!("{sheet}!{}", a1_ref(row as i64, col as i64).unwrap_or_default())
}

/// Numeric value of one cell after formula evaluation; `None` for empty.
fn cell_number(ev: &WorkbookEvaluator, wb: &Workbook, sheet: &str, row: u32, col: u32) -> Result<Option<f64>, ExecError> {
    if wb.sheet(sheet).is_none() {
        return Err(ExecError::SheetNotFound(sheet.into()));
    }
    match ev.cell_value(sheet, row, col) {
        Ok(Value::Number(n)) => Ok(Some(n)),
        Ok(Value::Empty) => Ok(None),
        Ok(_) => Err(ExecError::NonNumericCell(label(sheet, row, col))),
        Err(cause) => Err(ExecError::EvalError {
            cell: label(sheet, row, col),
            cause,
            files: Vec::new(),
        }),
    }
}

fn single_number(ev: &WorkbookEvaluator, wb: &Workbook, sheet: &str, reference: &str) -> Result<(f64, String), ExecError> {
    let (s, range) = target(sheet, reference)?;
    if range.rows() != 1 || range.cols() != 1 {
        return Err(ExecError::BadRange(format!("{reference} must be a single cell")));
    }
    let loc = label(&s, range.start_row, range.start_col);
    let n = cell_number(ev, wb, &s, range.start_row, range.start_col)?
        .ok_or_else(|| ExecError::NonNumericCell(loc.clone()))?;
    Ok((n, loc))
}

fn range_sum(ev: &WorkbookEvaluator, wb: &Workbook, sheet: &str, reference: &str) -> Result<(f64, String), ExecError> {
    let (s, range) = target(sheet, reference)?;
    let mut sum = 0.0;
    for (r, c) in range.iter() {
        sum += cell_number(ev, wb, &s, r, c)?.unwrap_or(0.0);
    }
    Ok((sum, format!("{s}!{range}")))
}

/// Assets = Liabilities + Equity, each given as a single-cell reference.
pub fn balance_sheet_report(
    wb: &Workbook,
    sheet: &str,
    assets_ref: &str,
    liabilities_ref: &str,
    equity_ref: &str,
    tolerance: f64,
) -> Result<ValidationReport, ExecError> {
    check_tolerance(tolerance)?;
    let ev = WorkbookEvaluator::new(wb);
    let (a, la) = single_number(&ev, wb, sheet, assets_ref)?;
    let (l, ll) = single_number(&ev, wb, sheet, liabilities_ref)?;
    let (e, le) = single_number(&ev, wb, sheet, equity_ref)?;
    Ok(ValidationReport::new("balance_sheet", a, l + e, tolerance, vec![la, ll, le]))
}

/// Σ debits = Σ credits; empty cells count as 0.
pub fn debit_credit_report(
    wb: &Workbook,
    sheet: &str,
    debit_range: &str,
    credit_range: &str,
    tolerance: f64,
) -> Result<ValidationReport, ExecError> {
    check_tolerance(tolerance)?;
    let ev = WorkbookEvaluator::new(wb);
    let (d, ld) = range_sum(&ev, wb, sheet, debit_range)?;
    let (c, lc) = range_sum(&ev, wb, sheet, credit_range)?;
    Ok(ValidationReport::new("debit_credit", d, c, tolerance, vec![ld, lc]))
}

pub fn check_balance_sheet(
    workbook_path: &Path,
    sheet: &str,
    assets_ref: &str,
    liabilities_ref: &str,
    equity_ref: &str,
    tolerance: f64,
) -> Result<ValidationReport, ExecError> {
    let wb = load_workbook(workbook_path)?;
    balance_sheet_report(&wb, sheet, assets_ref, liabilities_ref, equity_ref, tolerance)
}

pub fn check_debit_credit(
    workbook_path: &Path,
    sheet: &str,
    debit_range: &str,
    credit_range: &str,
    tolerance: f64,
) -> Result<ValidationReport, ExecError> {
    let wb = load_workbook(workbook_path)?;
    debit_credit_report(&wb, sheet, debit_range, credit_range, tolerance)
}
