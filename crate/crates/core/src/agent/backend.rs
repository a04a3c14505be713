use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::message::{Message, Part, Role, ToolCall};
use super::tools::ToolSchema;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend failure: {0}")]
    Failure(String),
    #[error("script mismatch at step {step}: {detail}")]
    ScriptMismatch { step: usize, detail: String },
    #[error("invalid backend response: {0}")]
    InvalidResponse(String),
}

/// A language model driving the tool loop: message history in, one
/// assistant message out.
pub trait LlmBackend: Send + Sync {
    fn step(&self, messages: &[Message], tools: &[ToolSchema]) -> Result<Message, BackendError>;
}

pub const SCRIPT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedCall {
    pub tool: String,
    #[serde(default)]
    pub arguments: Map<String, Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptStep {
    /// Substring required in the rendered latest message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<String>,
    /// Text emitted alongside any tool calls.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub calls: Vec<ScriptedCall>,
    /// Final answer; a step with no calls must carry one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    /// Makes the step fail with a backend error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Substring of the first user message selecting this script; `None`
    /// matches any conversation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub select: Option<String>,
    pub steps: Vec<ScriptStep>,
    /// Replay the last step forever instead of failing past the end.
    #[serde(default)]
    pub repeat_last: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptFile {
    format_version: u32,
    scripts: Vec<Script>,
}

/// Deterministic backend replaying fixed steps. The step index is the number
/// of assistant turns already in the history, so the response is a pure
/// function of the messages.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScriptedBackend {
    scripts: Vec<Script>,
}

impl ScriptedBackend {
    pub fn new(scripts: Vec<Script>) -> Result<Self, BackendError> {
        for (i, s) in scripts.iter().enumerate() {
            if s.steps.is_empty() {
                return Err(BackendError::InvalidResponse(format!("script {i} has no steps")));
            }
            for (j, step) in s.steps.iter().enumerate() {
                if step.calls.is_empty() && step.answer.is_none() && step.fail.is_none() {
                    return Err(BackendError::InvalidResponse(format!(
                        "script {i} step {j} has neither calls, answer nor fail"
                    )));
                }
            }
        }
        Ok(ScriptedBackend { scripts })
    }

    pub fn single(steps: Vec<ScriptStep>) -> Self {
        ScriptedBackend::new(vec![Script {
            steps,
            ..Default::default()
        }])
        .expect("non-empty script")
    }

    /// A backend that calls `tool` on every turn.
    pub fn always_call(tool: &str, arguments: Value) -> Self {
        let Value::Object(arguments) = arguments else {
            panic!("arguments must be a JSON object")
        };
        ScriptedBackend::new(vec![Script {
            steps: vec![ScriptStep {
                calls: vec![ScriptedCall {
                    tool: tool.into(),
                    arguments,
                }],
                ..Default::default()
            }],
            repeat_last: true,
            ..Default::default()
        }])
        .expect("non-empty script")
    }

    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        let raw: Value =
            serde_json::from_str(text).map_err(|e| BackendError::InvalidResponse(format!("script file: {e}")))?;
        let version = raw.get("format_version").and_then(Value::as_u64);
        if version != Some(SCRIPT_FORMAT_VERSION as u64) {
            return Err(BackendError::InvalidResponse(format!(
                "script file format_version {version:?}, expected {SCRIPT_FORMAT_VERSION}"
            )));
        }
        let file: ScriptFile =
            serde_json::from_value(raw).map_err(|e| BackendError::InvalidResponse(format!("script file: {e}")))?;
        ScriptedBackend::new(file.scripts)
    }

    pub fn from_path(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Failure(format!("reading {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ScriptFile {
            format_version: SCRIPT_FORMAT_VERSION,
            scripts: self.scripts.clone(),
        })
        .expect("script serializes")
    }

    fn select(&self, messages: &[Message]) -> Option<&Script> {
        let first_user = messages.iter().find(|m| m.role == Role::User).map(Message::text).unwrap_or_default();
        self.scripts
            .iter()
            .find(|s| s.select.as_deref().is_none_or(|sel| first_user.contains(sel)))
    }
}

impl LlmBackend for ScriptedBackend {
    fn step(&self, messages: &[Message], _tools: &[ToolSchema]) -> Result<Message, BackendError> {
        let step_no = messages
            .iter()
            .filter(|m| m.role == Role::Assistant && !m.is_bootstrap())
            .count();
        let script = self.select(messages).ok_or_else(|| BackendError::ScriptMismatch {
            step: step_no,
            detail: "no script selects this conversation".into(),
        })?;
        let step = match script.steps.get(step_no) {
            Some(s) => s,
            None if script.repeat_last => script.steps.last().expect("non-empty"),
            None => {
                return Err(BackendError::ScriptMismatch {
                    step: step_no,
                    detail: format!(
                        "script {} has only {} steps",
                        script.name.as_deref().unwrap_or("<unnamed>"),
                        script.steps.len()
                    ),
                })
            }
        };
        if let Some(expect) = &step.expect {
            let latest = messages.last().map(Message::render).unwrap_or_default();
            if !latest.contains(expect.as_str()) {
                return Err(BackendError::ScriptMismatch {
                    step: step_no,
                    detail: format!("expected latest message to contain {expect:?}"),
                });
            }
        }
        if let Some(cause) = &step.fail {
            return Err(BackendError::Failure(cause.clone()));
        }
        let mut content = Vec::new();
        if let Some(t) = &step.text {
            content.push(Part::Text(t.clone()));
        }
        if step.calls.is_empty() {
            content.push(Part::Text(step.answer.clone().unwrap_or_default()));
        }
        for (j, c) in step.calls.iter().enumerate() {
            content.push(Part::ToolCall(ToolCall {
                call_id: format!("call-{:03}-{j}", step_no + 1),
                tool_name: c.tool.clone(),
                arguments: c.arguments.clone(),
            }));
        }
        Ok(Message::new(Role::Assistant, content))
    }
}

/// JSON-over-HTTP backend. The request body is
/// `{"model", "messages", "tools"}` using this crate's message encoding and
/// the response body is one assistant [`Message`]. The bearer token is read
/// from the environment variable named in `api_key_env` at call time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackend {
    pub url: String,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    120
}

impl HttpBackend {
    pub fn new(url: impl Into<String>) -> Self {
        HttpBackend {
            url: url.into(),
            model: None,
            api_key_env: None,
            timeout_secs: default_timeout_secs(),
        }
    }
}

impl LlmBackend for HttpBackend {
    fn step(&self, messages: &[Message], tools: &[ToolSchema]) -> Result<Message, BackendError> {
        let agent = ureq::AgentBuilder::new()
            .timeout(std::time::Duration::from_secs(self.timeout_secs))
            .build();
        let mut req = agent.post(&self.url).set("content-type", "application/json");
        if let Some(var) = &self.api_key_env {
            let key = std::env::var(var)
                .map_err(|_| BackendError::Failure(format!("environment variable {var} is not set")))?;
            req = req.set("authorization", &format!("Bearer {key}"));
        }
        let body = serde_json::json!({
            "model": self.model,
            "messages": messages,
            "tools": tools,
        });
        let resp = req.send_json(body).map_err(|e| BackendError::Failure(e.to_string()))?;
        let msg: Message = resp
            .into_json()
            .map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
        if msg.role != Role::Assistant {
            return Err(BackendError::InvalidResponse(format!("expected assistant role, got {:?}", msg.role)));
        }
        msg.validate().map_err(BackendError::InvalidResponse)?;
        Ok(msg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn two_step() -> ScriptedBackend {
        ScriptedBackend::single(vec![
            ScriptStep {
                calls: vec![ScriptedCall {
                    tool: "search_all".into(),
                    arguments: json!({"query": "revenue"}).as_object().unwrap().clone(),
                }],
                ..Default::default()
            },
            ScriptStep {
                expect: Some("ok=true".into()),
                answer: Some("X".into()),
                ..Default::default()
            },
        ])
    }

    #[test]
    fn steps_follow_assistant_count() {
        let b = two_step();
        let mut h = vec![Message::user("q")];
        let m1 = b.step(&h, &[]).unwrap();
        assert_eq!(m1.tool_calls().count(), 1);
        assert_eq!(b.step(&h, &[]).unwrap(), m1);
        h.push(m1);
        h.push(Message::tool(super::super::message::ToolResult {
            call_id: "call-001-0".into(),
            ok: true,
            chunks: vec![],
            output: None,
            artifacts: vec![],
            error: None,
        }));
        assert_eq!(b.step(&h, &[]).unwrap().text(), "X");
        h.push(Message::assistant_text("X"));
        assert!(matches!(b.step(&h, &[]), Err(BackendError::ScriptMismatch { step: 2, .. })));
    }

    #[test]
    fn expectation_mismatch() {
        let b = two_step();
        let h = vec![
            Message::user("q"),
            Message::assistant_text("calls"),
            Message::tool(super::super::message::ToolResult::failure("c", "boom")),
        ];
        assert!(matches!(b.step(&h, &[]), Err(BackendError::ScriptMismatch { step: 1, .. })));
    }

    #[test]
    fn script_file_round_trip_and_selection() {
        let text = r#"{"format_version": 1, "scripts": [
            {"select": "alpha", "steps": [{"answer": "A"}]},
            {"steps": [{"answer": "default"}]}
        ]}"#;
        let b = ScriptedBackend::from_json(text).unwrap();
        assert_eq!(b.step(&[Message::user("about alpha")], &[]).unwrap().text(), "A");
        assert_eq!(b.step(&[Message::user("other")], &[]).unwrap().text(), "default");
        assert_eq!(ScriptedBackend::from_json(&b.to_json()).unwrap(), b);
        assert!(ScriptedBackend::from_json(r#"{"format_version": 2, "scripts": []}"#).is_err());
        assert!(ScriptedBackend::from_json(r#"{"format_version": 1, "scripts": [{"steps": [{}]}]}"#).is_err());
    }

    #[test]
    fn http_backend_round_trip() {
        use std::io::{BufRead, BufReader, Read, Write};
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            let mut auth = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let l = line.trim_end().to_ascii_lowercase();
                if l.is_empty() {
                    break;
                }
                if let Some(v) = l.strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                if l.starts_with("authorization:") {
                    auth = line.trim_end().to_string();
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let reply = r#"{"role":"assistant","content":[{"text":"hello"}]}"#;
            let mut s = stream;
            write!(
                s,
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n{reply}",
                reply.len()
            )
            .unwrap();
            (String::from_utf8(body).unwrap(), auth)
        });
        std::env::set_var("SHEETRAG_TEST_HTTP_KEY", "secret");
        let backend = HttpBackend {
            api_key_env: Some("SHEETRAG_TEST_HTTP_KEY".into()),
            ..HttpBackend::new(format!("http://{addr}/v1/step"))
        };
        let reply = backend.step(&[Message::user("hi")], &[]).unwrap();
        assert_eq!(reply.text(), "hello");
        let (body, auth) = server.join().unwrap();
        let v: Value = serde_json::from_str(&body).unwrap();
        assert_eq!(v["messages"][0]["content"][0]["text"], "hi");
        assert!(auth.ends_with("Bearer secret"));
    }
}
