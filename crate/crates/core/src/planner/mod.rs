//! Task decomposition into a subtask graph, wave scheduling of typed
//! executors, and synthesis of the final answer.

mod decompose;
mod execute;
mod explore;
mod plan;
mod synthesize;
mod workflow;

use thiserror::Error;

use crate::agent::{register_search_tools, BackendError, ToolRegistry};
use crate::executors::{excel_tools, io_tools, ocr_tools, validation_tools, web_tools, ToolContext};
use crate::index::FusionConfig;

pub use decompose::{
    decompose, decompose_with, repair_prompt, Decomposition, PromptTemplate, DEFAULT_PLANNER_TEMPLATE,
    PLANNER_SYSTEM_PROMPT,
};
pub use execute::{
    execute_plan, executor_system_prompt, subtask_context, summarize, summarize_with, Backends, EventKind, Execution,
    ExecutionConfig, PerTypeBackends, ScheduleEvent, SubtaskResult, SubtaskStatus, ToolSets, DEFAULT_CONCURRENCY,
    DEFAULT_SUMMARY_CAP,
};
pub use explore::{explore_data, extract_quoted_terms, ExplorationContext, ExplorationHit, TermHits};
pub use plan::{parse_plan, ExecutorType, OutputType, Plan, Subtask, MAX_SUBTASKS};
pub use synthesize::{artifact_manifest, synthesis_prompt, synthesize, synthesize_with, Synthesis};
pub use workflow::{run_workflow, WorkflowConfig, WorkflowOutcome, RUN_FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error("plan invalid after repair: {}", errors.join("; "))]
    PlanInvalid {
        errors: Vec<String>,
        /// Raw backend replies, in order.
        responses: Vec<String>,
    },
    #[error("backend failure: {0}")]
    BackendFailure(#[from] BackendError),
    #[error("unknown executor type `{0}`")]
    UnknownExecutorType(String),
    #[error("the search executor needs an index")]
    MissingIndex,
    #[error("planner template: {0}")]
    Template(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Executor tool sets: the five search tools, the excel, io and validation
/// tools, and stubs for web and ocr.
pub fn get_tool_set(kind: ExecutorType, ctx: &ToolContext, fusion: &FusionConfig) -> Result<ToolRegistry, PlannerError> {
    Ok(match kind {
        ExecutorType::Search => register_search_tools(ctx.index.clone().ok_or(PlannerError::MissingIndex)?, *fusion),
        ExecutorType::Excel => excel_tools(ctx),
        ExecutorType::Io => io_tools(ctx),
        ExecutorType::Validation => validation_tools(ctx),
        ExecutorType::Web => web_tools(),
        ExecutorType::Ocr => ocr_tools(),
    })
}

pub fn get_tool_set_by_name(name: &str, ctx: &ToolContext, fusion: &FusionConfig) -> Result<ToolRegistry, PlannerError> {
    let kind = ExecutorType::parse(name).ok_or_else(|| PlannerError::UnknownExecutorType(name.to_string()))?;
    get_tool_set(kind, ctx, fusion)
}

/// Tool sets built from one shared context.
#[derive(Clone)]
pub struct StandardToolSets {
    pub ctx: ToolContext,
    pub fusion: FusionConfig,
}

impl ToolSets for StandardToolSets {
    fn tools_for(&self, kind: ExecutorType) -> Result<ToolRegistry, PlannerError> {
        get_tool_set(kind, &self.ctx, &self.fusion)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{ToolCall, SEARCH_TOOL_NAMES};
    use crate::chunker::{chunk_workbook, ChunkConfig};
    use crate::index::{build_index, MockEmbedder};
    use crate::workbook::{CellValue, Sheet, Workbook};
    use std::sync::Arc;

    #[test]
    fn tool_sets() {
        let mut sheet = Sheet::new("S");
        sheet.set(1, 1, CellValue::text("Revenue")).unwrap();
        let wb = Workbook::new("wb", vec![sheet]).unwrap();
        let chunks = chunk_workbook(&wb, &ChunkConfig::default()).unwrap();
        let index = Arc::new(build_index(chunks, Arc::new(MockEmbedder::default())).unwrap());
        let dir = tempfile::tempdir().unwrap();
        let ctx = ToolContext::new(dir.path());
        let fusion = FusionConfig::default();
        assert!(matches!(get_tool_set(ExecutorType::Search, &ctx, &fusion), Err(PlannerError::MissingIndex)));
        let ctx = ctx.with_index(index);
        let search = get_tool_set(ExecutorType::Search, &ctx, &fusion).unwrap();
        let mut expected: Vec<String> = SEARCH_TOOL_NAMES.iter().map(|s| s.to_string()).collect();
        expected.sort();
        assert_eq!(search.names(), expected);
        assert_eq!(
            get_tool_set(ExecutorType::Validation, &ctx, &fusion).unwrap().names(),
            vec!["check_balance_sheet", "check_debit_credit"]
        );
        assert!(get_tool_set(ExecutorType::Excel, &ctx, &fusion).unwrap().get("transcribe_image").is_some());
        let web = get_tool_set(ExecutorType::Web, &ctx, &fusion).unwrap();
        for name in web.names() {
            let res = web.execute(&ToolCall::new("1", &name, serde_json::json!({"query": "x", "url": "u"})));
            assert!(!res.ok);
        }
        let res = web.execute(&ToolCall::new("1", "web_search", serde_json::json!({"query": "x"})));
        assert!(res.error.unwrap().starts_with("not implemented"));
        assert!(matches!(
            get_tool_set_by_name("telepathy", &ctx, &fusion),
            Err(PlannerError::UnknownExecutorType(_))
        ));
    }
}
