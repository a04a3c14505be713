use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ExecError;
use crate::util::atomic_write;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IoFormat {
    Csv,
    Json,
    Text,
    Markdown,
    Pdf,
    Docx,
}

impl IoFormat {
    pub fn parse(s: &str) -> Option<IoFormat> {
        Some(match s.to_ascii_lowercase().as_str() {
            "csv" => IoFormat::Csv,
            "json" => IoFormat::Json,
            "text" | "txt" => IoFormat::Text,
            "markdown" | "md" => IoFormat::Markdown,
            "pdf" => IoFormat::Pdf,
            "docx" => IoFormat::Docx,
            _ => return None,
        })
    }

    pub fn from_path(path: &Path) -> Option<IoFormat> {
        path.extension().and_then(|e| IoFormat::parse(&e.to_string_lossy()))
    }

    fn supported(self) -> Result<(), ExecError> {
        match self {
            IoFormat::Pdf | IoFormat::Docx => Err(ExecError::UnsupportedFormat(format!(
                "{self:?} files are not implemented"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum IoContent {
    Text { text: String },
    Json { value: Value },
    Table { header: Vec<String>, records: Vec<Vec<String>> },
}

fn csv_error(e: csv::Error) -> ExecError {
    let (line, column) = match e.kind() {
        csv::ErrorKind::UnequalLengths { pos, len, .. } => (pos.as_ref().map_or(0, |p| p.line()), *len as u64 + 1),
        _ => (e.position().map_or(0, |p| p.line()), 0),
    };
    ExecError::Parse {
        line,
        column,
        message: e.to_string(),
    }
}

fn json_error(e: serde_json::Error) -> ExecError {
    ExecError::Parse {
        line: e.line() as u64,
        column: e.column() as u64,
        message: e.to_string(),
    }
}

pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<String>>), ExecError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers().map_err(csv_error)?.iter().map(String::from).collect();
    let mut records = Vec::new();
    for r in reader.records() {
        records.push(r.map_err(csv_error)?.iter().map(String::from).collect());
    }
    Ok((header, records))
}

pub fn render_csv(header: &[String], records: &[Vec<String>]) -> Result<String, ExecError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    if !header.is_empty() {
        w.write_record(header).map_err(csv_error)?;
    }
    for r in records {
        w.write_record(r).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| ExecError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv input was utf-8"))
}

/// Reads a CSV (header + records), JSON, text or markdown file. The format
/// comes from the file extension; unknown extensions read as text.
pub fn io_read(path: &Path) -> Result<IoContent, ExecError> {
    let format = IoFormat::from_path(path).unwrap_or(IoFormat::Text);
    format.supported()?;
    if !path.is_file() {
        return Err(ExecError::FileNotFound(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    Ok(match format {
        IoFormat::Csv => {
            let (header, records) = parse_csv(&text)?;
            IoContent::Table { header, records }
        }
        IoFormat::Json => IoContent::Json {
            value: serde_json::from_str(&text).map_err(json_error)?,
        },
        _ => IoContent::Text { text },
    })
}

/// Serializes `content` in `format` and writes it atomically. Text given for
/// CSV or JSON is validated before being written verbatim.
pub fn io_write(path: &Path, content: &IoContent, format: IoFormat) -> Result<(), ExecError> {
    format.supported()?;
    let bytes = match (format, content) {
        (IoFormat::Csv, IoContent::Table { header, records }) => render_csv(header, records)?,
        (IoFormat::Csv, IoContent::Text { text }) => {
            parse_csv(text)?;
            text.clone()
        }
        (IoFormat::Json, IoContent::Json { value }) => {
            let mut s = serde_json::to_string_pretty(value).map_err(json_error)?;
            s.push('\n');
            s
        }
        (IoFormat::Json, IoContent::Text { text }) => {
            serde_json::from_str::<Value>(text).map_err(json_error)?;
            text.clone()
        }
        (IoFormat::Text | IoFormat::Markdown, IoContent::Text { text }) => text.clone(),
        (f, c) => {
            return Err(ExecError::UnsupportedFormat(format!(
                "cannot write {} content as {f:?}",
                match c {
                    IoContent::Text { .. } => "text",
                    IoContent::Json { .. } => "json",
                    IoContent::Table { .. } => "table",
                }
            )))
        }
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    atomic_write(path, bytes.as_bytes())?;
    Ok(())
}
