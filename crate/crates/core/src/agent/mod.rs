//! Tool-calling agent loop over the search tools, with image pruning and an
//! auditable trace.

mod backend;
mod message;
mod prune;
mod search_tools;
mod tools;
mod trace;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

pub use backend::{
    BackendError, HttpBackend, LlmBackend, Script, ScriptStep, ScriptedBackend, ScriptedCall, SCRIPT_FORMAT_VERSION,
};
pub use message::{render_result, ImageContent, ImagePart, Message, Part, ResultChunk, Role, ToolCall, ToolResult};
pub use prune::{estimate_tokens, estimate_tokens_with, prune_images, prune_images_in_place, DEFAULT_IMAGE_TOKENS};
pub use search_tools::{add_search_tools, hit_to_result_chunk, register_search_tools, SearchTool, SEARCH_TOOL_NAMES};
pub use tools::{args, ParamSpec, ParamType, Tool, ToolError, ToolOutput, ToolRegistry, ToolSchema};
pub use trace::{
    export_trace, import_trace, read_trace_jsonl, trace_to_jsonl, write_trace_jsonl, Trace, TraceEntry, TraceError,
    TRACE_FORMAT_VERSION,
};

use crate::index::{FusionConfig, Index, SearchFilter, SearchHit};

pub const BOOTSTRAP_CALL_ID: &str = "bootstrap";

pub const DEFAULT_SYSTEM_PROMPT: &str = "You answer questions about spreadsheet workbooks. \
Use the search tools to locate rows, columns, cell windows and images. Refine queries and use the \
row/col parameters to narrow results. When you have enough evidence, reply with a final answer \
that cites sheet names and cell ranges.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopBudget {
    pub max_tool_iterations: usize,
    pub initial_k: usize,
}

impl Default for LoopBudget {
    fn default() -> Self {
        LoopBudget {
            max_tool_iterations: 50,
            initial_k: 10,
        }
    }
}

impl LoopBudget {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.max_tool_iterations < 1 || self.initial_k < 1 {
            return Err(AgentError::InvalidBudget(format!(
                "max_tool_iterations={} initial_k={} (both must be ≥ 1)",
                self.max_tool_iterations, self.initial_k
            )));
        }
        Ok(())
    }
}

/// Source of trace timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Clock {
    #[default]
    System,
    /// Every reading returns this value.
    Fixed(u64),
}

impl Clock {
    pub fn now_ms(&self) -> u64 {
        match self {
            Clock::System => crate::util::now_ms(),
            Clock::Fixed(t) => *t,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AgentOptions {
    pub system_prompt: String,
    pub clock: Clock,
    pub subtask_id: Option<u32>,
    pub per_image_tokens: u64,
}

impl Default for AgentOptions {
    fn default() -> Self {
        AgentOptions {
            system_prompt: DEFAULT_SYSTEM_PROMPT.to_string(),
            clock: Clock::System,
            subtask_id: None,
            per_image_tokens: DEFAULT_IMAGE_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AgentAnswer {
    Final { text: String },
    /// The tool budget ran out; carries the last assistant text seen.
    BudgetExhausted { last_text: String },
}

impl AgentAnswer {
    pub fn text(&self) -> &str {
        match self {
            AgentAnswer::Final { text } => text,
            AgentAnswer::BudgetExhausted { last_text } => last_text,
        }
    }

    pub fn is_final(&self) -> bool {
        matches!(self, AgentAnswer::Final { .. })
    }
}

#[derive(Debug, Clone)]
pub struct AgentRun {
    pub answer: AgentAnswer,
    pub trace: Trace,
    pub messages: Vec<Message>,
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
    #[error("{cause} (after {} tool calls)", trace.len())]
    BackendFailure {
        cause: BackendError,
        trace: Box<Trace>,
        messages: Vec<Message>,
    },
}

/// Top-`initial_k` hybrid hits used as the agent's starting context.
pub fn bootstrap_hits(index: &Index, query: &str, budget: &LoopBudget, fusion: &FusionConfig) -> Vec<SearchHit> {
    index.hybrid_search(query, &SearchFilter::default(), &fusion.with_top_k(budget.initial_k))
}

struct Recorder<'a> {
    options: &'a AgentOptions,
    trace: Trace,
    next_seq: u64,
}

impl Recorder<'_> {
    fn record(&mut self, call: ToolCall, result: &ToolResult, tool_msg: &Message) -> TraceEntry {
        let call_msg = Message::assistant_calls(vec![call.clone()]);
        let entry = TraceEntry {
            format_version: TRACE_FORMAT_VERSION,
            seq: self.next_seq,
            timestamp_ms: self.options.clock.now_ms(),
            subtask_id: self.options.subtask_id,
            tool_call: call,
            tool_result: result.stubbed(),
            token_estimate: estimate_tokens_with(&call_msg, self.options.per_image_tokens)
                + estimate_tokens_with(tool_msg, self.options.per_image_tokens),
        };
        self.next_seq += 1;
        entry
    }
}

/// Runs the tool loop until the backend answers without tool calls or the
/// budget of tool calls is spent. `initial_context` is injected as the
/// result of a synthetic `bootstrap` search call.
pub fn run_agent(
    query: &str,
    initial_context: &[SearchHit],
    registry: &ToolRegistry,
    backend: &dyn LlmBackend,
    budget: &LoopBudget,
    options: &AgentOptions,
) -> Result<AgentRun, AgentError> {
    budget.validate()?;
    let schemas = registry.schemas();
    let mut messages = vec![Message::system(&options.system_prompt), Message::user(query)];
    let mut rec = Recorder {
        options,
        trace: Trace::default(),
        next_seq: 0,
    };

    if !initial_context.is_empty() {
        let call = ToolCall::new(
            BOOTSTRAP_CALL_ID,
            "search_all",
            json!({"query": query, "K": budget.initial_k}),
        );
        let result = ToolResult {
            call_id: BOOTSTRAP_CALL_ID.into(),
            ok: true,
            chunks: initial_context.iter().map(hit_to_result_chunk).collect(),
            output: None,
            artifacts: Vec::new(),
            error: None,
        };
        let tool_msg = Message::tool(result.clone());
        rec.trace.bootstrap = Some(rec.record(call.clone(), &result, &tool_msg));
        messages.push(Message::assistant_calls(vec![call]));
        messages.push(tool_msg);
        prune_images_in_place(&mut messages);
    }
    rec.next_seq = 1;

    let mut last_text = String::new();
    loop {
        if rec.trace.len() >= budget.max_tool_iterations {
            return Ok(AgentRun {
                answer: AgentAnswer::BudgetExhausted { last_text },
                trace: rec.trace,
                messages,
            });
        }
        let mut reply = match backend.step(&messages, &schemas) {
            Ok(m) if m.role != Role::Assistant => Err(BackendError::InvalidResponse(format!(
                "expected an assistant message, got {:?}",
                m.role
            ))),
            Ok(m) => m.validate().map(|_| m).map_err(BackendError::InvalidResponse),
            Err(e) => Err(e),
        }
        .map_err(|cause| AgentError::BackendFailure {
            cause,
            trace: Box::new(rec.trace.clone()),
            messages: messages.clone(),
        })?;

        let text = reply.text();
        if !text.is_empty() {
            last_text = text.clone();
        }
        let remaining = budget.max_tool_iterations - rec.trace.len();
        let mut kept = 0;
        reply.content.retain(|p| match p {
            Part::ToolCall(_) => {
                kept += 1;
                kept <= remaining
            }
            _ => true,
        });
        let calls: Vec<ToolCall> = reply.tool_calls().cloned().collect();
        messages.push(reply);
        if calls.is_empty() {
            return Ok(AgentRun {
                answer: AgentAnswer::Final { text },
                trace: rec.trace,
                messages,
            });
        }
        for call in calls {
            let result = registry.execute(&call);
            let tool_msg = Message::tool(result.clone());
            let entry = rec.record(call, &result, &tool_msg);
            rec.trace.entries.push(entry);
            let has_images = tool_msg.inline_image_count() > 0;
            messages.push(tool_msg);
            if has_images {
                prune_images_in_place(&mut messages);
            }
        }
    }
}
