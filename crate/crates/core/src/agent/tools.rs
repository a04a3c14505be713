use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::message::{ResultChunk, ToolCall, ToolResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    String,
    Integer,
    Number,
    Boolean,
    Array,
    Object,
    /// Any JSON value.
    Any,
}

impl ParamType {
    fn accepts(self, v: &Value) -> bool {
        match self {
            ParamType::String => v.is_string(),
            ParamType::Integer => v.is_i64() || v.is_u64(),
            ParamType::Number => v.is_number(),
            ParamType::Boolean => v.is_boolean(),
            ParamType::Array => v.is_array(),
            ParamType::Object => v.is_object(),
            ParamType::Any => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: ParamType,
    pub required: bool,
    pub description: String,
}

impl ParamSpec {
    pub fn required(name: &str, kind: ParamType, description: &str) -> Self {
        ParamSpec {
            name: name.into(),
            kind,
            required: true,
            description: description.into(),
        }
    }

    pub fn optional(name: &str, kind: ParamType, description: &str) -> Self {
        ParamSpec {
            required: false,
            ..Self::required(name, kind, description)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    pub parameters: Vec<ParamSpec>,
}

impl ToolSchema {
    /// Checks required parameters, unknown names and JSON types. Integer
    /// parameters must be ≥ 1.
    pub fn validate_args(&self, args: &Map<String, Value>) -> Result<(), String> {
        for name in args.keys() {
            if !self.parameters.iter().any(|p| &p.name == name) {
                return Err(format!("{}: unknown argument `{name}`", self.name));
            }
        }
        for p in &self.parameters {
            match args.get(&p.name) {
                None | Some(Value::Null) if p.required => {
                    return Err(format!("{}: missing required argument `{}`", self.name, p.name))
                }
                None | Some(Value::Null) => {}
                Some(v) if !p.kind.accepts(v) => {
                    return Err(format!("{}: argument `{}` must be {:?}", self.name, p.name, p.kind))
                }
                Some(v) if p.kind == ParamType::Integer && v.as_i64().is_some_and(|n| n < 1) => {
                    return Err(format!("{}: argument `{}` must be ≥ 1", self.name, p.name))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// Successful tool output before it is wrapped into a [`ToolResult`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ToolOutput {
    pub chunks: Vec<ResultChunk>,
    pub output: Option<Value>,
    pub artifacts: Vec<String>,
}

impl ToolOutput {
    pub fn value(v: Value) -> Self {
        ToolOutput {
            output: Some(v),
            ..Default::default()
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ToolError {
    #[error("invalid arguments: {0}")]
    InvalidArguments(String),
    #[error("not implemented: {0}")]
    NotImplemented(String),
    #[error("{0}")]
    Failed(String),
    /// Failure after files were already written.
    #[error("{message}")]
    WithArtifacts { message: String, artifacts: Vec<String> },
}

pub trait Tool: Send + Sync {
    fn schema(&self) -> ToolSchema;
    fn call(&self, args: &Map<String, Value>) -> Result<ToolOutput, ToolError>;
}

#[derive(Clone, Default)]
pub struct ToolRegistry {
    tools: BTreeMap<String, Arc<dyn Tool>>,
}

impl std::fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.tools.keys()).finish()
    }
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tool, replacing any previous tool with the same name.
    pub fn register(&mut self, tool: Arc<dyn Tool>) {
        self.tools.insert(tool.schema().name, tool);
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn Tool>> {
        self.tools.get(name)
    }

    pub fn names(&self) -> Vec<String> {
        self.tools.keys().cloned().collect()
    }

    pub fn schemas(&self) -> Vec<ToolSchema> {
        self.tools.values().map(|t| t.schema()).collect()
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    /// Runs a call. Unknown tools, schema violations and tool errors all come
    /// back as `ok = false` results.
    pub fn execute(&self, call: &ToolCall) -> ToolResult {
        let Some(tool) = self.tools.get(&call.tool_name) else {
            return ToolResult::failure(&call.call_id, format!("unknown tool `{}`", call.tool_name));
        };
        if let Err(e) = tool.schema().validate_args(&call.arguments) {
            return ToolResult::failure(&call.call_id, ToolError::InvalidArguments(e).to_string());
        }
        match tool.call(&call.arguments) {
            Ok(out) => ToolResult {
                call_id: call.call_id.clone(),
                ok: true,
                chunks: out.chunks,
                output: out.output,
                artifacts: out.artifacts,
                error: None,
            },
            Err(ToolError::WithArtifacts { message, artifacts }) => ToolResult {
                artifacts,
                ..ToolResult::failure(&call.call_id, message)
            },
            Err(e) => ToolResult::failure(&call.call_id, e.to_string()),
        }
    }
}

/// Argument accessors used by tool implementations.
pub mod args {
    use super::ToolError;
    use serde_json::{Map, Value};

    pub fn string(args: &Map<String, Value>, name: &str) -> Result<String, ToolError> {
        opt_string(args, name)?.ok_or_else(|| ToolError::InvalidArguments(format!("missing `{name}`")))
    }

    pub fn opt_string(args: &Map<String, Value>, name: &str) -> Result<Option<String>, ToolError> {
        match args.get(name) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(ToolError::InvalidArguments(format!("`{name}` must be a string"))),
        }
    }

    pub fn opt_u32(args: &Map<String, Value>, name: &str) -> Result<Option<u32>, ToolError> {
        match args.get(name) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v
                .as_u64()
                .filter(|&n| n >= 1 && n <= u32::MAX as u64)
                .map(|n| Some(n as u32))
                .ok_or_else(|| ToolError::InvalidArguments(format!("`{name}` must be a positive integer"))),
        }
    }

    pub fn opt_f64(args: &Map<String, Value>, name: &str) -> Result<Option<f64>, ToolError> {
        match args.get(name) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => v
                .as_f64()
                .map(Some)
                .ok_or_else(|| ToolError::InvalidArguments(format!("`{name}` must be a number"))),
        }
    }

    pub fn opt_bool(args: &Map<String, Value>, name: &str) -> Result<Option<bool>, ToolError> {
        match args.get(name) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::Bool(b)) => Ok(Some(*b)),
            Some(_) => Err(ToolError::InvalidArguments(format!("`{name}` must be a boolean"))),
        }
    }
}
