use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::json;

use super::decompose::{decompose_with, Decomposition, PromptTemplate};
use super::execute::{execute_plan, Backends, EventKind, Execution, ExecutionConfig};
use super::explore::{explore_data, ExplorationContext};
use super::plan::Subtask;
use super::synthesize::{synthesize_with, Synthesis};
use super::{PlannerError, StandardToolSets};
use crate::agent::{trace_to_jsonl, LlmBackend};
use crate::executors::ToolContext;
use crate::index::Index;
use crate::util::atomic_write;

pub const RUN_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct WorkflowConfig {
    pub execution: ExecutionConfig,
    /// Hits kept per quoted term during exploration.
    pub explore_k: usize,
    pub template: PromptTemplate,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        WorkflowConfig {
            execution: ExecutionConfig::default(),
            explore_k: 10,
            template: PromptTemplate::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorkflowOutcome {
    pub run_dir: PathBuf,
    pub exploration: ExplorationContext,
    pub decomposition: Decomposition,
    pub execution: Execution,
    pub synthesis: Synthesis,
}

struct Single<'a>(&'a dyn LlmBackend);

impl Backends for Single<'_> {
    fn for_subtask(&self, _: &Subtask) -> &dyn LlmBackend {
        self.0
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), PlannerError> {
    let mut text = serde_json::to_string_pretty(value).expect("json values serialize");
    text.push('\n');
    atomic_write(path, text.as_bytes())?;
    Ok(())
}

/// Manifest form of an artifact: paths relative to the tool work dir are
/// given relative to the run directory.
fn run_relative(artifact: &str) -> String {
    if Path::new(artifact).is_absolute() {
        artifact.to_string()
    } else {
        format!("artifacts/{artifact}")
    }
}

/// Explores, plans, executes and synthesizes `task`, recording everything
/// under `run_dir`:
/// `plan.json`, `traces/subtask-<id>.jsonl`, `traces/merged.jsonl`,
/// `artifacts/`, `answer.txt`, `manifest.json` and `run.log`.
/// One backend serves the planner, the executors and the synthesis.
pub fn run_workflow(
    task: &str,
    output_path: &str,
    index: Arc<Index>,
    backend: &dyn LlmBackend,
    config: &WorkflowConfig,
    run_dir: &Path,
) -> Result<WorkflowOutcome, PlannerError> {
    let artifacts_dir = run_dir.join("artifacts");
    let traces_dir = run_dir.join("traces");
    std::fs::create_dir_all(&artifacts_dir)?;
    std::fs::create_dir_all(&traces_dir)?;
    let mut log = String::new();

    let exploration = explore_data(task, &index, config.explore_k, &config.execution.fusion);
    let _ = writeln!(log, "explore: {} quoted term(s)", exploration.quoted_terms.len());

    let decomposition = match decompose_with(task, output_path, &exploration, backend, &config.template) {
        Ok(d) => d,
        Err(PlannerError::PlanInvalid { errors, responses }) => {
            let _ = writeln!(log, "decompose: plan invalid after repair");
            for e in &errors {
                let _ = writeln!(log, "  {e}");
            }
            write_json(
                &run_dir.join("plan_invalid.json"),
                &json!({
                    "format_version": RUN_FORMAT_VERSION,
                    "task": task,
                    "errors": errors,
                    "responses": responses,
                }),
            )?;
            atomic_write(&run_dir.join("run.log"), log.as_bytes())?;
            return Err(PlannerError::PlanInvalid { errors, responses });
        }
        Err(e) => return Err(e),
    };
    let plan = &decomposition.plan;
    if decomposition.repaired {
        let _ = writeln!(log, "decompose: plan repaired after 1 invalid response");
    } else {
        let _ = writeln!(log, "decompose: plan accepted");
    }
    write_json(
        &run_dir.join("plan.json"),
        &json!({
            "format_version": RUN_FORMAT_VERSION,
            "task": task,
            "output_path": output_path,
            "exploration": exploration,
            "repaired": decomposition.repaired,
            "planner_responses": decomposition.responses,
            "plan": plan,
        }),
    )?;

    let tools = StandardToolSets {
        ctx: ToolContext::new(&artifacts_dir).with_index(index.clone()),
        fusion: config.execution.fusion,
    };
    let execution = execute_plan(plan, task, &tools, &Single(backend), Some(&index), &config.execution)?;
    for (w, wave) in execution.waves.iter().enumerate() {
        let ids: Vec<String> = wave.iter().map(u32::to_string).collect();
        let _ = writeln!(log, "wave {w}: subtasks {}", ids.join(", "));
    }
    for e in &execution.log {
        let what = match e.event {
            EventKind::Started => "started".to_string(),
            EventKind::Finished => format!("finished [{}]", e.status.map_or("?", |s| s.as_str())),
            EventKind::Blocked => "blocked by a failed dependency".to_string(),
        };
        let _ = writeln!(log, "[{}] wave {} subtask {} {what}", e.seq, e.wave, e.subtask_id);
    }

    let mut subtasks = Vec::new();
    for (id, r) in &execution.results {
        let file = format!("traces/subtask-{id}.jsonl");
        atomic_write(&run_dir.join(&file), trace_to_jsonl(&r.trace_slice).as_bytes())?;
        subtasks.push(json!({
            "id": id,
            "type": plan.subtask(*id).map(|s| s.kind),
            "status": r.status,
            "budget_exhausted": r.budget_exhausted,
            "blocked_by": r.blocked_by,
            "tool_calls": r.trace_slice.iter().filter(|e| e.tool_call.call_id != crate::agent::BOOTSTRAP_CALL_ID).count(),
            "trace": file,
        }));
    }
    let merged = execution.merged_trace();
    atomic_write(&traces_dir.join("merged.jsonl"), trace_to_jsonl(&merged).as_bytes())?;

    let results: Vec<_> = execution.results.values().cloned().collect();
    let synthesis = synthesize_with(
        task,
        &results,
        plan.output_type,
        backend,
        config.execution.summary_cap,
    )?;
    let _ = writeln!(log, "synthesize: {} artifact(s)", synthesis.manifest.len());
    atomic_write(&run_dir.join("answer.txt"), synthesis.answer.as_bytes())?;
    write_json(
        &run_dir.join("manifest.json"),
        &json!({
            "format_version": RUN_FORMAT_VERSION,
            "task": task,
            "output_path": output_path,
            "output_type": plan.output_type,
            "plan": "plan.json",
            "answer": "answer.txt",
            "merged_trace": "traces/merged.jsonl",
            "waves": execution.waves,
            "subtasks": subtasks,
            "artifacts": synthesis.manifest.iter().map(|a| run_relative(a)).collect::<Vec<_>>(),
        }),
    )?;
    atomic_write(&run_dir.join("run.log"), log.as_bytes())?;

    Ok(WorkflowOutcome {
        run_dir: run_dir.to_path_buf(),
        exploration,
        decomposition,
        execution,
        synthesis,
    })
}
