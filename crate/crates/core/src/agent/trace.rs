use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::message::{ToolCall, ToolResult};

pub const TRACE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {detail}")]
    Malformed { line: usize, detail: String },
    #[error("trace line {line}: unsupported format_version {found}")]
    UnsupportedVersion { line: usize, found: u64 },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One executed tool call. Results are stored with image payloads replaced
/// by digests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub format_version: u32,
    pub seq: u64,
    pub timestamp_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtask_id: Option<u32>,
    pub tool_call: ToolCall,
    pub tool_result: ToolResult,
    pub token_estimate: u64,
}

/// Tool calls issued during one agent run. The bootstrap retrieval is kept
/// apart from the budgeted entries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub bootstrap: Option<TraceEntry>,
    pub entries: Vec<TraceEntry>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Bootstrap first, then the budgeted entries.
    pub fn all_entries(&self) -> impl Iterator<Item = &TraceEntry> {
        self.bootstrap.iter().chain(self.entries.iter())
    }

    pub fn total_tokens(&self) -> u64 {
        self.all_entries().map(|e| e.token_estimate).sum()
    }

    /// Checks strictly increasing seq numbers and call/result pairing.
    pub fn validate(&self) -> Result<(), String> {
        let mut last: Option<u64> = None;
        for e in self.all_entries() {
            if last.is_some_and(|l| e.seq <= l) {
                return Err(format!("seq {} does not increase", e.seq));
            }
            last = Some(e.seq);
            if e.tool_call.call_id != e.tool_result.call_id {
                return Err(format!(
                    "call {} paired with result {}",
                    e.tool_call.call_id, e.tool_result.call_id
                ));
            }
            if e.tool_result.ok && e.tool_result.error.is_some() {
                return Err(format!("result {} is ok but carries an error", e.tool_result.call_id));
            }
            if e.tool_result.has_inline_images() {
                return Err(format!("result {} stores an image payload", e.tool_result.call_id));
            }
        }
        Ok(())
    }
}

pub fn write_trace_jsonl<'a>(
    entries: impl IntoIterator<Item = &'a TraceEntry>,
    mut out: impl Write,
) -> std::io::Result<()> {
    for e in entries {
        serde_json::to_writer(&mut out, e).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn trace_to_jsonl<'a>(entries: impl IntoIterator<Item = &'a TraceEntry>) -> String {
    let mut buf = Vec::new();
    write_trace_jsonl(entries, &mut buf).expect("in-memory write");
    String::from_utf8(buf).expect("json is utf-8")
}

pub fn export_trace(trace: &Trace, path: &Path) -> std::io::Result<()> {
    crate::util::atomic_write(path, trace_to_jsonl(trace.all_entries()).as_bytes())
}

pub fn read_trace_jsonl(input: impl BufRead) -> Result<Vec<TraceEntry>, TraceError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: serde_json::Value = serde_json::from_str(&line).map_err(|e| TraceError::Malformed {
            line: i + 1,
            detail: e.to_string(),
        })?;
        let version = raw.get("format_version").and_then(serde_json::Value::as_u64).unwrap_or(0);
        if version != TRACE_FORMAT_VERSION as u64 {
            return Err(TraceError::UnsupportedVersion {
                line: i + 1,
                found: version,
            });
        }
        out.push(serde_json::from_value(raw).map_err(|e| TraceError::Malformed {
            line: i + 1,
            detail: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn import_trace(path: &Path) -> Result<Vec<TraceEntry>, TraceError> {
    let f = std::fs::File::open(path)?;
    read_trace_jsonl(std::io::BufReader::new(f))
}
