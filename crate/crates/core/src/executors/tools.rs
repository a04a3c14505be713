//! Agent-facing wrappers around the executor operations.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::{json, Map, Value};

use super::excel::{excel_format, excel_read_range, excel_write, load_workbook, CellEdit, Grid};
use super::io::{io_read, io_write, IoContent, IoFormat};
use super::transcribe::{transcribe_with, OcrProvider, StubOcr};
use super::validation::{check_balance_sheet, check_debit_credit, DEFAULT_TOLERANCE};
use super::ExecError;
use crate::agent::{args, ParamSpec, ParamType, Tool, ToolError, ToolOutput, ToolRegistry, ToolSchema};
use crate::index::Index;
use crate::workbook::{parse_range, CellFormat, CellKind, CellValue};

/// Shared state for executor tools. Relative paths resolve against
/// `work_dir`.
#[derive(Clone)]
pub struct ToolContext {
    pub work_dir: PathBuf,
    pub index: Option<Arc<Index>>,
    pub ocr: Arc<dyn OcrProvider>,
}

impl ToolContext {
    pub fn new(work_dir: impl Into<PathBuf>) -> Self {
        ToolContext {
            work_dir: work_dir.into(),
            index: None,
            ocr: Arc::new(StubOcr),
        }
    }

    pub fn with_index(mut self, index: Arc<Index>) -> Self {
        self.index = Some(index);
        self
    }

    /// `p` relative to `work_dir` when it lies inside it.
    pub fn display_path(&self, p: &Path) -> String {
        p.strip_prefix(&self.work_dir).unwrap_or(p).display().to_string()
    }

    /// Converts an executor error, reporting written files like [`Self::display_path`].
    pub fn tool_error(&self, e: ExecError) -> ToolError {
        match e {
            ExecError::EvalError { cell, cause, files } => ExecError::EvalError {
                cell,
                cause,
                files: files.iter().map(|f| PathBuf::from(self.display_path(f))).collect(),
            }
            .into(),
            e => e.into(),
        }
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.work_dir.join(p)
        }
    }
}

impl From<ExecError> for ToolError {
    fn from(e: ExecError) -> Self {
        match e {
            ExecError::EvalError { ref files, .. } if !files.is_empty() => ToolError::WithArtifacts {
                message: e.to_string(),
                artifacts: files.iter().map(|f| f.display().to_string()).collect(),
            },
            ExecError::UnsupportedFormat(m) => ToolError::NotImplemented(m),
            e => ToolError::Failed(e.to_string()),
        }
    }
}

pub fn cell_to_json(c: &CellValue) -> Value {
    if c.eval_error.is_some() {
        return Value::String(c.raw.clone());
    }
    match c.kind {
        CellKind::Empty => Value::Null,
        CellKind::Text | CellKind::Datetime => Value::String(c.raw.clone()),
        CellKind::Boolean => Value::Bool(c.numeric == Some(1.0)),
        CellKind::Number => c.numeric.map_or(Value::Null, |n| json!(n)),
        CellKind::Formula => c.numeric.map_or_else(|| Value::String(c.raw.clone()), |n| json!(n)),
    }
}

pub fn json_to_cell(v: &Value) -> Result<CellValue, ToolError> {
    Ok(match v {
        Value::Null => CellValue::empty(),
        Value::Bool(b) => CellValue::boolean(*b),
        Value::Number(n) => CellValue::number(
            n.as_f64()
                .filter(|f| f.is_finite())
                .ok_or_else(|| ToolError::InvalidArguments(format!("{n} is not a finite number")))?,
        ),
        Value::String(s) if s.starts_with('=') => CellValue::formula(s.clone()),
        Value::String(s) => CellValue::text(s.clone()),
        other => return Err(ToolError::InvalidArguments(format!("unsupported cell value {other}"))),
    })
}

pub fn grid_to_json(g: &Grid) -> Value {
    let mut formulas = Map::new();
    for (i, row) in g.rows.iter().enumerate() {
        for (j, c) in row.iter().enumerate() {
            if let Some(f) = &c.formula_text {
                let a1 = crate::workbook::a1_ref(
                    (g.range.start_row as usize + i) as i64,
                    (g.range.start_col as usize + j) as i64,
                )
                .unwrap_or_default();
                formulas.insert(a1, Value::String(f.clone()));
            }
        }
    }
    json!({
        "sheet": g.sheet,
        "range": g.range.to_string(),
        "values": g.rows.iter().map(|r| r.iter().map(cell_to_json).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "formulas": formulas,
    })
}

fn schema(name: &str, description: &str, parameters: Vec<ParamSpec>) -> ToolSchema {
    ToolSchema {
        name: name.into(),
        description: description.into(),
        parameters,
    }
}

fn req(name: &str, kind: ParamType, d: &str) -> ParamSpec {
    ParamSpec::required(name, kind, d)
}

fn opt(name: &str, kind: ParamType, d: &str) -> ParamSpec {
    ParamSpec::optional(name, kind, d)
}

fn artifacts(ctx: &ToolContext, files: &[PathBuf]) -> Vec<String> {
    files.iter().map(|f| ctx.display_path(f)).collect()
}

pub struct ExcelReadRange(pub ToolContext);

impl Tool for ExcelReadRange {
    fn schema(&self) -> ToolSchema {
        schema(
            "excel_read_range",
            "Read a rectangular cell range from a workbook (.xlsx or canonical .json).",
            vec![
                req("workbook_path", ParamType::String, "workbook file"),
                req("range", ParamType::String, "A1 range, optionally sheet-qualified"),
                opt("sheet", ParamType::String, "sheet name when the range is unqualified"),
            ],
        )
    }

    fn call(&self, a: &Map<String, Value>) -> Result<ToolOutput, ToolError> {
        let path = self.0.resolve(&args::string(a, "workbook_path")?);
        let sheet = args::opt_string(a, "sheet")?;
        let g = excel_read_range(&path, sheet.as_deref(), &args::string(a, "range")?)?;
        Ok(ToolOutput::value(grid_to_json(&g)))
    }
}

pub struct ExcelWrite(pub ToolContext);

fn parse_edit(default_sheet: &str, e: &Value) -> Result<CellEdit, ToolError> {
    let obj = e
        .as_object()
        .ok_or_else(|| ToolError::InvalidArguments("each edit must be an object".into()))?;
    let value = json_to_cell(obj.get("value").unwrap_or(&Value::Null))?;
    if let Some(cell) = obj.get("cell").and_then(Value::as_str) {
        let r = parse_range(cell).map_err(|e| ToolError::InvalidArguments(e.to_string()))?;
        if r.range.rows() != 1 || r.range.cols() != 1 {
            return Err(ToolError::InvalidArguments(format!("{cell} is not a single cell")));
        }
        let sheet = r
            .sheet
            .or_else(|| obj.get("sheet").and_then(Value::as_str).map(String::from))
            .unwrap_or_else(|| default_sheet.to_string());
        return Ok(CellEdit::new(sheet, r.range.start_row, r.range.start_col, value));
    }
    let row = args::opt_u32(obj, "row")?;
    let col = args::opt_u32(obj, "col")?;
    match (row, col) {
        (Some(row), Some(col)) => {
            let sheet = args::opt_string(obj, "sheet")?.unwrap_or_else(|| default_sheet.to_string());
            Ok(CellEdit::new(sheet, row, col, value))
        }
        _ => Err(ToolError::InvalidArguments("edit needs `cell` or `row` and `col`".into())),
    }
}

impl Tool for ExcelWrite {
    fn schema(&self) -> ToolSchema {
        schema(
            "excel_write",
            "Write values or formulas (strings starting with '=') to cells. Edits: [{\"cell\": \"A1\", \"value\": 3}]. \
             Formulas support SUM, AVERAGE, MIN, MAX, COUNT, IF and arithmetic, and are evaluated on write.",
            vec![
                req("workbook_path", ParamType::String, "target .xlsx or .json workbook"),
                req("edits", ParamType::Array, "list of {cell | row+col, value, sheet?}"),
                opt("sheet", ParamType::String, "default sheet for edits (default Sheet1)"),
                opt("create_if_missing", ParamType::Boolean, "create the workbook if absent (default true)"),
            ],
        )
    }

    fn call(&self, a: &Map<String, Value>) -> Result<ToolOutput, ToolError> {
        let path = self.0.resolve(&args::string(a, "workbook_path")?);
        let sheet = args::opt_string(a, "sheet")?.unwrap_or_else(|| "Sheet1".into());
        let edits = a
            .get("edits")
            .and_then(Value::as_array)
            .ok_or_else(|| ToolError::InvalidArguments("`edits` must be an array".into()))?
            .iter()
            .map(|e| parse_edit(&sheet, e))
            .collect::<Result<Vec<_>, _>>()?;
        let create = args::opt_bool(a, "create_if_missing")?.unwrap_or(true);
        let report = excel_write(&path, &edits, create).map_err(|e| self.0.tool_error(e))?;
        Ok(ToolOutput {
            output: Some(json!({"cells_written": report.cells_written})),
            artifacts: artifacts(&self.0, &report.files),
            ..Default::default()
        })
    }
}

pub struct ExcelFormat(pub ToolContext);

impl Tool for ExcelFormat {
    fn schema(&self) -> ToolSchema {
        schema(
            "excel_format",
            "Set number format, bold and fill metadata on a range of an existing workbook.",
            vec![
                req("workbook_path", ParamType::String, "workbook file"),
                req("range", ParamType::String, "A1 range, optionally sheet-qualified"),
                opt("sheet", ParamType::String, "sheet name when the range is unqualified"),
                opt("number_format", ParamType::String, "e.g. #,##0.00"),
                opt("bold", ParamType::Boolean, "bold text"),
                opt("fill", ParamType::String, "fill colour, e.g. FFFF00"),
            ],
        )
    }

    fn call(&self, a: &Map<String, Value>) -> Result<ToolOutput, ToolError> {
        let path = self.0.resolve(&args::string(a, "workbook_path")?);
        let sheet = args::opt_string(a, "sheet")?;
        let format = CellFormat {
            number_format: args::opt_string(a, "number_format")?,
            bold: args::opt_bool(a, "bold")?.unwrap_or(false),
            fill: args::opt_string(a, "fill")?,
        };
        let report = excel_format(&path, sheet.as_deref(), &args::string(a, "range")?, &format)?;
        Ok(ToolOutput {
            output: Some(json!({"cells_formatted": report.cells_written})),
            artifacts: artifacts(&self.0, &report.files),
            ..Default::default()
        })
    }
}

pub struct TranscribeImage(pub ToolContext);

impl Tool for TranscribeImage {
    fn schema(&self) -> ToolSchema {
        schema(
            "transcribe_image",
            "Transcribe an embedded image to text.",
            vec![
                req("image_id", ParamType::String, "image id as shown in image search results"),
                opt("workbook_path", ParamType::String, "workbook holding the image; defaults to the indexed corpus"),
            ],
        )
    }

    fn call(&self, a: &Map<String, Value>) -> Result<ToolOutput, ToolError> {
        let image_id = args::string(a, "image_id")?;
        let t = match args::opt_string(a, "workbook_path")? {
            Some(p) => {
                let wb = load_workbook(&self.0.resolve(&p))?;
                let img = wb
                    .find_image(&image_id)
                    .ok_or_else(|| ExecError::ImageNotFound(image_id.clone()))?;
                transcribe_with(self.0.ocr.as_ref(), &image_id, &img.payload, &img.encoding, &img.alt_text)?
            }
            None => {
                let img = self
                    .0
                    .index
                    .as_ref()
                    .and_then(|idx| {
                        idx.chunks()
                            .iter()
                            .filter_map(|c| c.image.as_ref())
                            .find(|i| i.image_id == image_id)
                    })
                    .ok_or_else(|| ExecError::ImageNotFound(image_id.clone()))?;
                transcribe_with(self.0.ocr.as_ref(), &image_id, &img.payload, &img.encoding, &img.alt_text)?
            }
        };
        Ok(ToolOutput::value(serde_json::to_value(t).expect("serializable")))
    }
}

pub struct IoRead(pub ToolContext);

impl Tool for IoRead {
    fn schema(&self) -> ToolSchema {
        schema(
            "io_read",
            "Read a CSV, JSON, text or markdown file.",
            vec![req("path", ParamType::String, "file path")],
        )
    }

    fn call(&self, a: &Map<String, Value>) -> Result<ToolOutput, ToolError> {
        let content = io_read(&self.0.resolve(&args::string(a, "path")?))?;
        Ok(ToolOutput::value(serde_json::to_value(content).expect("serializable")))
    }
}

pub struct IoWrite(pub ToolContext);

impl Tool for IoWrite {
    fn schema(&self) -> ToolSchema {
        schema(
            "io_write",
            "Write a CSV, JSON, text or markdown file. CSV content may be text or an array of rows \
             (first row is the header); JSON content may be any value.",
            vec![
                req("path", ParamType::String, "file path"),
                req("content", ParamType::Any, "file content"),
                opt("format", ParamType::String, "csv | json | text | markdown (default from extension)"),
            ],
        )
    }

    fn call(&self, a: &Map<String, Value>) -> Result<ToolOutput, ToolError> {
        let path = self.0.resolve(&args::string(a, "path")?);
        let format = match args::opt_string(a, "format")? {
            Some(f) => IoFormat::parse(&f).ok_or_else(|| ToolError::InvalidArguments(format!("unknown format {f}")))?,
            None => IoFormat::from_path(&path).unwrap_or(IoFormat::Text),
        };
        let raw = a.get("content").cloned().unwrap_or(Value::Null);
        let content = match (format, raw) {
            (_, Value::String(text)) => IoContent::Text { text },
            (IoFormat::Csv, Value::Array(rows)) => {
                let mut rows: Vec<Vec<String>> = rows
                    .iter()
                    .map(|r| {
                        r.as_array()
                            .ok_or_else(|| ToolError::InvalidArguments("CSV rows must be arrays".into()))
                            .map(|cells| {
                                cells
                                    .iter()
                                    .map(|c| match c {
                                        Value::String(s) => s.clone(),
                                        Value::Null => String::new(),
                                        other => other.to_string(),
                                    })
                                    .collect()
                            })
                    })
                    .collect::<Result<_, _>>()?;
                let header = if rows.is_empty() { Vec::new() } else { rows.remove(0) };
                IoContent::Table { header, records: rows }
            }
            (IoFormat::Json, value) => IoContent::Json { value },
            (_, other) => IoContent::Text { text: other.to_string() },
        };
        io_write(&path, &content, format)?;
        Ok(ToolOutput {
            output: Some(json!({"written": self.0.display_path(&path)})),
            artifacts: vec![self.0.display_path(&path)],
            ..Default::default()
        })
    }
}

pub struct CheckBalanceSheet(pub ToolContext);

impl Tool for CheckBalanceSheet {
    fn schema(&self) -> ToolSchema {
        schema(
            "check_balance_sheet",
            "Check Assets = Liabilities + Equity on single-cell references.",
            vec![
                req("workbook_path", ParamType::String, "workbook file"),
                req("sheet", ParamType::String, "sheet for unqualified references"),
                req("assets", ParamType::String, "assets cell"),
                req("liabilities", ParamType::String, "liabilities cell"),
                req("equity", ParamType::String, "equity cell"),
                opt("tolerance", ParamType::Number, "allowed absolute difference (default 0.01)"),
            ],
        )
    }

    fn call(&self, a: &Map<String, Value>) -> Result<ToolOutput, ToolError> {
        let r = check_balance_sheet(
            &self.0.resolve(&args::string(a, "workbook_path")?),
            &args::string(a, "sheet")?,
            &args::string(a, "assets")?,
            &args::string(a, "liabilities")?,
            &args::string(a, "equity")?,
            args::opt_f64(a, "tolerance")?.unwrap_or(DEFAULT_TOLERANCE),
        )?;
        Ok(ToolOutput::value(serde_json::to_value(r).expect("serializable")))
    }
}

pub struct CheckDebitCredit(pub ToolContext);

impl Tool for CheckDebitCredit {
    fn schema(&self) -> ToolSchema {
        schema(
            "check_debit_credit",
            "Check that the debit range total equals the credit range total.",
            vec![
                req("workbook_path", ParamType::String, "workbook file"),
                req("sheet", ParamType::String, "sheet for unqualified ranges"),
                req("debits", ParamType::String, "debit range"),
                req("credits", ParamType::String, "credit range"),
                opt("tolerance", ParamType::Number, "allowed absolute difference (default 0.01)"),
            ],
        )
    }

    fn call(&self, a: &Map<String, Value>) -> Result<ToolOutput, ToolError> {
        let r = check_debit_credit(
            &self.0.resolve(&args::string(a, "workbook_path")?),
            &args::string(a, "sheet")?,
            &args::string(a, "debits")?,
            &args::string(a, "credits")?,
            args::opt_f64(a, "tolerance")?.unwrap_or(DEFAULT_TOLERANCE),
        )?;
        Ok(ToolOutput::value(serde_json::to_value(r).expect("serializable")))
    }
}

/// A declared tool whose every invocation fails with NotImplemented.
pub struct StubTool {
    pub name: String,
    pub description: String,
    pub parameters: Vec<ParamSpec>,
}

impl StubTool {
    pub fn new(name: &str, description: &str, parameters: Vec<ParamSpec>) -> Self {
        StubTool {
            name: name.into(),
            description: description.into(),
            parameters,
        }
    }
}

impl Tool for StubTool {
    fn schema(&self) -> ToolSchema {
        schema(&self.name, &self.description, self.parameters.clone())
    }

    fn call(&self, _: &Map<String, Value>) -> Result<ToolOutput, ToolError> {
        Err(ToolError::NotImplemented(format!("{} is not available in this build", self.name)))
    }
}

pub fn excel_tools(ctx: &ToolContext) -> ToolRegistry {
    let mut r = ToolRegistry::new();
    r.register(Arc::new(ExcelReadRange(ctx.clone())));
    r.register(Arc::new(ExcelWrite(ctx.clone())));
    r.register(Arc::new(ExcelFormat(ctx.clone())));
    r.register(Arc::new(TranscribeImage(ctx.clone())));
    r
}

pub fn io_tools(ctx: &ToolContext) -> ToolRegistry {
    let doc_params = || {
        vec![
            req("path", ParamType::String, "output file"),
            req("content", ParamType::String, "document text"),
        ]
    };
    let mut r = ToolRegistry::new();
    r.register(Arc::new(IoRead(ctx.clone())));
    r.register(Arc::new(IoWrite(ctx.clone())));
    r.register(Arc::new(StubTool::new("write_pdf", "Write a PDF document.", doc_params())));
    r.register(Arc::new(StubTool::new("write_docx", "Write a DOCX document.", doc_params())));
    r
}

pub fn validation_tools(ctx: &ToolContext) -> ToolRegistry {
    let mut r = ToolRegistry::new();
    r.register(Arc::new(CheckBalanceSheet(ctx.clone())));
    r.register(Arc::new(CheckDebitCredit(ctx.clone())));
    r
}

pub fn web_tools() -> ToolRegistry {
    let mut r = ToolRegistry::new();
    r.register(Arc::new(StubTool::new(
        "web_search",
        "Search the web.",
        vec![req("query", ParamType::String, "search text")],
    )));
    r.register(Arc::new(StubTool::new(
        "web_fetch",
        "Fetch a web page.",
        vec![req("url", ParamType::String, "page URL")],
    )));
    r
}

pub fn ocr_tools() -> ToolRegistry {
    let mut r = ToolRegistry::new();
    r.register(Arc::new(StubTool::new(
        "ocr_document",
        "Run OCR over a scanned document.",
        vec![req("path", ParamType::String, "image or PDF file")],
    )));
    r
}
