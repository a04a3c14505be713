use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::chunker::ChunkKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
    Tool,
}

/// Image content either inline or reduced to a metadata stub.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum ImageContent {
    Inline {
        image_id: String,
        encoding: String,
        alt_text: String,
        #[serde(with = "crate::util::base64_bytes")]
        payload: Vec<u8>,
    },
    Stub {
        image_id: String,
        encoding: String,
        alt_text: String,
        digest: String,
        text: String,
    },
}

impl ImageContent {
    pub fn is_inline(&self) -> bool {
        matches!(self, ImageContent::Inline { .. })
    }

    pub fn alt_text(&self) -> &str {
        match self {
            ImageContent::Inline { alt_text, .. } | ImageContent::Stub { alt_text, .. } => alt_text,
        }
    }

    /// Replaces an inline payload by a stub keeping location, alt text and
    /// the SHA-256 of the payload. Stubs are returned unchanged.
    pub fn to_stub(&self, location: &str) -> ImageContent {
        match self {
            ImageContent::Inline {
                image_id,
                encoding,
                alt_text,
                payload,
            } => {
                let digest = crate::util::sha256_hex(payload);
                ImageContent::Stub {
                    image_id: image_id.clone(),
                    encoding: encoding.clone(),
                    alt_text: alt_text.clone(),
                    text: format!("[image removed] {location} alt=\"{alt_text}\" sha256={digest}"),
                    digest,
                }
            }
            stub => stub.clone(),
        }
    }
}

/// A standalone image part with its location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePart {
    pub location: String,
    pub content: ImageContent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub call_id: String,
    pub tool_name: String,
    #[serde(default)]
    pub arguments: Map<String, Value>,
}

impl ToolCall {
    pub fn new(call_id: impl Into<String>, tool_name: impl Into<String>, arguments: Value) -> Self {
        ToolCall {
            call_id: call_id.into(),
            tool_name: tool_name.into(),
            arguments: match arguments {
                Value::Object(m) => m,
                _ => Map::new(),
            },
        }
    }
}

/// One chunk returned by a search tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultChunk {
    pub chunk_id: String,
    pub kind: ChunkKind,
    pub sheet: String,
    /// `Sheet!A1:B2`
    pub location: String,
    pub row_span: (u32, u32),
    pub col_span: (u32, u32),
    pub headers: Vec<String>,
    pub text: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageContent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub call_id: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub chunks: Vec<ResultChunk>,
    /// Structured output of non-search tools.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<Value>,
    /// Files written by the tool.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub artifacts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ToolResult {
    pub fn failure(call_id: impl Into<String>, error: impl Into<String>) -> Self {
        ToolResult {
            call_id: call_id.into(),
            ok: false,
            chunks: Vec::new(),
            output: None,
            artifacts: Vec::new(),
            error: Some(error.into()),
        }
    }

    pub fn has_inline_images(&self) -> bool {
        self.chunks.iter().any(|c| c.image.as_ref().is_some_and(ImageContent::is_inline))
    }

    /// Copy with every inline image replaced by its digest stub.
    pub fn stubbed(&self) -> ToolResult {
        let mut out = self.clone();
        for c in &mut out.chunks {
            if let Some(img) = &c.image {
                c.image = Some(img.to_stub(&c.location));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Text(String),
    Image(ImagePart),
    ToolCall(ToolCall),
    ToolResult(ToolResult),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: Vec<Part>,
}

impl Message {
    pub fn new(role: Role, content: Vec<Part>) -> Self {
        Message { role, content }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self::new(Role::System, vec![Part::Text(text.into())])
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self::new(Role::User, vec![Part::Text(text.into())])
    }

    pub fn assistant_text(text: impl Into<String>) -> Self {
        Self::new(Role::Assistant, vec![Part::Text(text.into())])
    }

    pub fn assistant_calls(calls: Vec<ToolCall>) -> Self {
        Self::new(Role::Assistant, calls.into_iter().map(Part::ToolCall).collect())
    }

    pub fn tool(result: ToolResult) -> Self {
        Self::new(Role::Tool, vec![Part::ToolResult(result)])
    }

    /// Concatenation of the text parts.
    pub fn text(&self) -> String {
        let texts: Vec<&str> = self
            .content
            .iter()
            .filter_map(|p| match p {
                Part::Text(t) => Some(t.as_str()),
                _ => None,
            })
            .collect();
        texts.join("\n")
    }

    pub fn tool_calls(&self) -> impl Iterator<Item = &ToolCall> {
        self.content.iter().filter_map(|p| match p {
            Part::ToolCall(c) => Some(c),
            _ => None,
        })
    }

    pub fn tool_results(&self) -> impl Iterator<Item = &ToolResult> {
        self.content.iter().filter_map(|p| match p {
            Part::ToolResult(r) => Some(r),
            _ => None,
        })
    }

    /// Number of inline image payloads carried by this message.
    pub fn inline_image_count(&self) -> usize {
        self.content
            .iter()
            .map(|p| match p {
                Part::Image(i) => usize::from(i.content.is_inline()),
                Part::ToolResult(r) => r
                    .chunks
                    .iter()
                    .filter(|c| c.image.as_ref().is_some_and(ImageContent::is_inline))
                    .count(),
                _ => 0,
            })
            .sum()
    }

    pub(crate) fn is_bootstrap(&self) -> bool {
        self.role == Role::Assistant
            && !self.content.is_empty()
            && self.tool_calls().count() == self.content.len()
            && self.tool_calls().all(|c| c.call_id == super::BOOTSTRAP_CALL_ID)
    }

    pub fn validate(&self) -> Result<(), String> {
        for p in &self.content {
            match p {
                Part::ToolCall(_) if self.role != Role::Assistant => {
                    return Err("tool_call part outside an assistant message".into())
                }
                Part::ToolResult(_) if self.role != Role::Tool => {
                    return Err("tool_result part outside a tool message".into())
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Plain-text rendering of every part; images appear as placeholders.
    pub fn render(&self) -> String {
        let mut out = Vec::new();
        for p in &self.content {
            match p {
                Part::Text(t) => out.push(t.clone()),
                Part::Image(i) => out.push(match &i.content {
                    ImageContent::Inline { alt_text, .. } => format!("[image {} alt=\"{alt_text}\"]", i.location),
                    ImageContent::Stub { text, .. } => text.clone(),
                }),
                Part::ToolCall(c) => out.push(format!(
                    "call {} {}({})",
                    c.call_id,
                    c.tool_name,
                    Value::Object(c.arguments.clone())
                )),
                Part::ToolResult(r) => out.push(render_result(r)),
            }
        }
        out.join("\n")
    }
}

pub fn render_result(r: &ToolResult) -> String {
    let mut s = format!("result {} ok={}", r.call_id, r.ok);
    if let Some(e) = &r.error {
        s.push_str(&format!("\nerror: {e}"));
    }
    for c in &r.chunks {
        s.push_str(&format!("\n[{}] {}", c.location, c.text));
        if let Some(ImageContent::Stub { text, .. }) = &c.image {
            s.push_str(&format!(" {text}"));
        }
    }
    if let Some(o) = &r.output {
        s.push_str(&format!("\noutput: {o}"));
    }
    for a in &r.artifacts {
        s.push_str(&format!("\nartifact: {a}"));
    }
    s
}
