use std::collections::{BTreeMap, VecDeque};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::plan::{ExecutorType, Plan, Subtask};
use super::PlannerError;
use crate::agent::{
    bootstrap_hits, run_agent, AgentError, AgentOptions, Clock, LlmBackend, LoopBudget, ToolRegistry, TraceEntry,
    DEFAULT_IMAGE_TOKENS, DEFAULT_SYSTEM_PROMPT,
};
use crate::chunker::TRUNCATION_MARKER;
use crate::index::{FusionConfig, Index};

pub const DEFAULT_CONCURRENCY: usize = 4;
pub const DEFAULT_SUMMARY_CAP: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubtaskStatus {
    Ok,
    Failed,
}

impl SubtaskStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SubtaskStatus::Ok => "ok",
            SubtaskStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskResult {
    pub subtask_id: u32,
    pub status: SubtaskStatus,
    /// The executor's answer, or the failure description.
    pub answer_text: String,
    pub artifacts: Vec<String>,
    pub trace_slice: Vec<TraceEntry>,
    /// The agent stopped at its tool budget instead of answering.
    #[serde(default)]
    pub budget_exhausted: bool,
    /// Set when the subtask was skipped because this dependency failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocked_by: Option<u32>,
}

impl SubtaskResult {
    pub fn failed(subtask_id: u32, answer_text: impl Into<String>) -> Self {
        SubtaskResult {
            subtask_id,
            status: SubtaskStatus::Failed,
            answer_text: answer_text.into(),
            artifacts: Vec::new(),
            trace_slice: Vec::new(),
            budget_exhausted: false,
            blocked_by: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == SubtaskStatus::Ok
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Started,
    Finished,
    /// Marked failed without running.
    Blocked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEvent {
    pub seq: u64,
    pub wave: usize,
    pub subtask_id: u32,
    pub event: EventKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<SubtaskStatus>,
    pub timestamp_ms: u64,
}

/// Source of an executor's tool registry.
pub trait ToolSets: Sync {
    fn tools_for(&self, kind: ExecutorType) -> Result<ToolRegistry, PlannerError>;
}

impl<F> ToolSets for F
where
    F: Fn(ExecutorType) -> Result<ToolRegistry, PlannerError> + Sync,
{
    fn tools_for(&self, kind: ExecutorType) -> Result<ToolRegistry, PlannerError> {
        self(kind)
    }
}

/// Chooses the backend that drives each subtask.
pub trait Backends: Sync {
    fn for_subtask(&self, subtask: &Subtask) -> &dyn LlmBackend;
}

impl<B: LlmBackend> Backends for B {
    fn for_subtask(&self, _: &Subtask) -> &dyn LlmBackend {
        self
    }
}

/// One backend per executor type, with a fallback.
pub struct PerTypeBackends {
    pub default: Box<dyn LlmBackend>,
    pub by_type: BTreeMap<ExecutorType, Box<dyn LlmBackend>>,
}

impl Backends for PerTypeBackends {
    fn for_subtask(&self, subtask: &Subtask) -> &dyn LlmBackend {
        self.by_type.get(&subtask.kind).unwrap_or(&self.default).as_ref()
    }
}

#[derive(Debug, Clone)]
pub struct ExecutionConfig {
    /// Tool budget applied to each subtask separately.
    pub budget: LoopBudget,
    pub concurrency: usize,
    pub summary_cap: usize,
    pub fusion: FusionConfig,
    pub clock: Clock,
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        ExecutionConfig {
            budget: LoopBudget::default(),
            concurrency: DEFAULT_CONCURRENCY,
            summary_cap: DEFAULT_SUMMARY_CAP,
            fusion: FusionConfig::default(),
            clock: Clock::System,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Execution {
    pub waves: Vec<Vec<u32>>,
    pub results: BTreeMap<u32, SubtaskResult>,
    pub log: Vec<ScheduleEvent>,
}

impl Execution {
    /// Trace entries of all subtasks, ordered by subtask id then sequence.
    pub fn merged_trace(&self) -> Vec<TraceEntry> {
        self.results.values().flat_map(|r| r.trace_slice.iter().cloned()).collect()
    }

    pub fn event_seq(&self, subtask_id: u32, kind: EventKind) -> Option<u64> {
        self.log
            .iter()
            .find(|e| e.subtask_id == subtask_id && e.event == kind)
            .map(|e| e.seq)
    }

    pub fn all_ok(&self) -> bool {
        self.results.values().all(SubtaskResult::is_ok)
    }
}

pub fn executor_system_prompt(kind: ExecutorType) -> &'static str {
    match kind {
        ExecutorType::Search => DEFAULT_SYSTEM_PROMPT,
        ExecutorType::Excel => {
            "You build and edit spreadsheet workbooks with the excel tools. Write values and formulas to \
             the requested cells, then reply with a short report of what was written and where."
        }
        ExecutorType::Io => "You read and write non-spreadsheet files. Reply with a short report of the files produced.",
        ExecutorType::Validation => {
            "You check accounting identities with the validation tools. Reply with each check result and \
             the cells involved."
        }
        ExecutorType::Web => "You gather external data with the web tools. Reply with what was found and its source.",
        ExecutorType::Ocr => "You transcribe scanned documents. Reply with the transcribed content.",
    }
}

fn truncate_chars(s: &str, cap: usize) -> String {
    match s.char_indices().nth(cap) {
        Some((end, _)) => format!("{}{TRUNCATION_MARKER}", &s[..end]),
        None => s.to_string(),
    }
}

pub fn summarize(results: &[SubtaskResult]) -> String {
    summarize_with(results, DEFAULT_SUMMARY_CAP)
}

/// One line per result, ordered by id, with answers cut at `cap` characters.
pub fn summarize_with(results: &[SubtaskResult], cap: usize) -> String {
    let mut sorted: Vec<&SubtaskResult> = results.iter().collect();
    sorted.sort_by_key(|r| r.subtask_id);
    sorted
        .iter()
        .map(|r| {
            let mut line = format!(
                "subtask {} [{}]: {}",
                r.subtask_id,
                r.status.as_str(),
                truncate_chars(&r.answer_text, cap)
            );
            if !r.artifacts.is_empty() {
                line.push_str(&format!("\nartifacts: {}", r.artifacts.join(", ")));
            }
            line
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// The prompt an executor agent receives: its description, the overall task
/// and digests of its dependencies' results.
pub fn subtask_context(task: &str, subtask: &Subtask, dependency_results: &[SubtaskResult], cap: usize) -> String {
    let mut s = format!(
        "Subtask {} ({}): {}\nOverall task: {task}\n",
        subtask.id, subtask.kind, subtask.description
    );
    if dependency_results.is_empty() {
        s.push_str("Results of prerequisite subtasks: none");
    } else {
        s.push_str("Results of prerequisite subtasks:\n");
        s.push_str(&summarize_with(dependency_results, cap));
    }
    s
}

fn collect_artifacts<'a>(entries: impl IntoIterator<Item = &'a TraceEntry>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for e in entries {
        for a in &e.tool_result.artifacts {
            if !out.contains(a) {
                out.push(a.clone());
            }
        }
    }
    out
}

struct Runner<'a> {
    task: &'a str,
    tools: &'a dyn ToolSets,
    backends: &'a dyn Backends,
    index: Option<&'a Index>,
    config: &'a ExecutionConfig,
}

impl Runner<'_> {
    fn run(&self, subtask: &Subtask, deps: &[SubtaskResult]) -> SubtaskResult {
        let query = subtask_context(self.task, subtask, deps, self.config.summary_cap);
        let registry = match self.tools.tools_for(subtask.kind) {
            Ok(r) => r,
            Err(e) => return SubtaskResult::failed(subtask.id, format!("no tools for {}: {e}", subtask.kind)),
        };
        let initial = match (subtask.kind, self.index) {
            (ExecutorType::Search, Some(index)) => bootstrap_hits(index, &query, &self.config.budget, &self.config.fusion),
            _ => Vec::new(),
        };
        let options = AgentOptions {
            system_prompt: executor_system_prompt(subtask.kind).to_string(),
            clock: self.config.clock,
            subtask_id: Some(subtask.id),
            per_image_tokens: DEFAULT_IMAGE_TOKENS,
        };
        let backend = self.backends.for_subtask(subtask);
        match run_agent(&query, &initial, &registry, backend, &self.config.budget, &options) {
            Ok(run) => SubtaskResult {
                subtask_id: subtask.id,
                status: SubtaskStatus::Ok,
                answer_text: run.answer.text().to_string(),
                artifacts: collect_artifacts(&run.trace.entries),
                trace_slice: run.trace.all_entries().cloned().collect(),
                budget_exhausted: !run.answer.is_final(),
                blocked_by: None,
            },
            Err(AgentError::BackendFailure { cause, trace, .. }) => SubtaskResult {
                artifacts: collect_artifacts(&trace.entries),
                trace_slice: trace.all_entries().cloned().collect(),
                ..SubtaskResult::failed(subtask.id, format!("backend failure: {cause}"))
            },
            Err(e) => SubtaskResult::failed(subtask.id, e.to_string()),
        }
    }
}

struct EventLog<'a> {
    clock: Clock,
    events: &'a Mutex<Vec<ScheduleEvent>>,
}

impl EventLog<'_> {
    fn push(&self, wave: usize, subtask_id: u32, event: EventKind, status: Option<SubtaskStatus>) {
        let mut events = self.events.lock().expect("event log poisoned");
        let seq = events.len() as u64;
        events.push(ScheduleEvent {
            seq,
            wave,
            subtask_id,
            event,
            status,
            timestamp_ms: self.clock.now_ms(),
        });
    }
}

/// Runs the plan wave by wave. Each wave holds every subtask whose
/// dependencies have resolved and runs on up to `concurrency` threads.
/// Subtasks with a failed dependency are marked failed without running.
pub fn execute_plan(
    plan: &Plan,
    task: &str,
    tools: &dyn ToolSets,
    backends: &dyn Backends,
    index: Option<&Index>,
    config: &ExecutionConfig,
) -> Result<Execution, PlannerError> {
    plan.validate().map_err(|errors| PlannerError::PlanInvalid {
        errors,
        responses: Vec::new(),
    })?;
    let waves = plan.waves().expect("validated plan is acyclic");
    let runner = Runner {
        task,
        tools,
        backends,
        index,
        config,
    };
    let events = Mutex::new(Vec::new());
    let log = EventLog {
        clock: config.clock,
        events: &events,
    };
    let mut results: BTreeMap<u32, SubtaskResult> = BTreeMap::new();

    for (w, wave) in waves.iter().enumerate() {
        let mut ready: VecDeque<(&Subtask, Vec<SubtaskResult>)> = VecDeque::new();
        for &id in wave {
            let subtask = plan.subtask(id).expect("wave ids come from the plan");
            let mut deps = subtask.dependencies.clone();
            deps.sort_unstable();
            deps.dedup();
            if let Some(&bad) = deps.iter().find(|d| !results[d].is_ok()) {
                let res = SubtaskResult {
                    blocked_by: Some(bad),
                    ..SubtaskResult::failed(id, format!("not run: dependency subtask {bad} failed"))
                };
                log.push(w, id, EventKind::Blocked, Some(SubtaskStatus::Failed));
                results.insert(id, res);
                continue;
            }
            ready.push_back((subtask, deps.iter().map(|d| results[d].clone()).collect()));
        }
        let workers = config.concurrency.max(1).min(ready.len());
        let queue = Mutex::new(ready);
        let done = Mutex::new(Vec::new());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let Some((subtask, deps)) = queue.lock().expect("queue poisoned").pop_front() else {
                        break;
                    };
                    log.push(w, subtask.id, EventKind::Started, None);
                    let res = runner.run(subtask, &deps);
                    log.push(w, subtask.id, EventKind::Finished, Some(res.status));
                    done.lock().expect("results poisoned").push(res);
                });
            }
        });
        for res in done.into_inner().expect("results poisoned") {
            results.insert(res.subtask_id, res);
        }
    }
    Ok(Execution {
        waves,
        results,
        log: events.into_inner().expect("event log poisoned"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{Script, ScriptStep, ScriptedBackend, ScriptedCall};
    use crate::executors::web_tools;
    use crate::planner::OutputType;

    fn result(id: u32, answer: &str) -> SubtaskResult {
        SubtaskResult {
            status: SubtaskStatus::Ok,
            ..SubtaskResult::failed(id, answer)
        }
    }

    #[test]
    fn summaries() {
        assert_eq!(summarize(&[]), "");
        assert_eq!(summarize(&[result(1, "0123456789")]), "subtask 1 [ok]: 0123456789");
        let long = "x".repeat(5000);
        let s = summarize(&[result(1, &long)]);
        assert_eq!(s, format!("subtask 1 [ok]: {}{TRUNCATION_MARKER}", "x".repeat(2000)));
        let mut two = vec![result(2, "b"), SubtaskResult::failed(1, "boom")];
        two[0].artifacts = vec!["out.xlsx".into()];
        assert_eq!(summarize(&two), "subtask 1 [failed]: boom\nsubtask 2 [ok]: b\nartifacts: out.xlsx");
    }

    fn answer_script(id: u32, answer: &str) -> Script {
        Script {
            name: Some(format!("subtask {id}")),
            select: Some(format!("Subtask {id} (")),
            steps: vec![ScriptStep {
                answer: Some(answer.into()),
                ..Default::default()
            }],
            repeat_last: false,
        }
    }

    fn plan(edges: &[(u32, &[u32])]) -> Plan {
        Plan {
            output_type: OutputType::Text,
            subtasks: edges
                .iter()
                .map(|(id, deps)| Subtask {
                    id: *id,
                    kind: ExecutorType::Web,
                    description: format!("step {id}"),
                    dependencies: deps.to_vec(),
                })
                .collect(),
        }
    }

    fn web(_: ExecutorType) -> Result<ToolRegistry, PlannerError> {
        Ok(web_tools())
    }

    fn config() -> ExecutionConfig {
        ExecutionConfig {
            clock: Clock::Fixed(0),
            ..Default::default()
        }
    }

    #[test]
    fn chain_runs_in_order() {
        let b = ScriptedBackend::new((1..=3).map(|i| answer_script(i, &format!("done {i}"))).collect()).unwrap();
        let ex = execute_plan(&plan(&[(1, &[]), (2, &[1]), (3, &[2])]), "t", &web, &b, None, &config()).unwrap();
        assert!(ex.all_ok());
        let started: Vec<u32> = ex.log.iter().filter(|e| e.event == EventKind::Started).map(|e| e.subtask_id).collect();
        assert_eq!(started, vec![1, 2, 3]);
        assert!(ex.event_seq(1, EventKind::Finished) < ex.event_seq(2, EventKind::Started));
    }

    #[test]
    fn failure_blocks_dependents() {
        let mut scripts = vec![answer_script(1, "one"), answer_script(3, "three")];
        scripts.push(Script {
            select: Some("Subtask 2 (".into()),
            steps: vec![ScriptStep {
                fail: Some("model offline".into()),
                ..Default::default()
            }],
            ..Default::default()
        });
        let b = ScriptedBackend::new(scripts).unwrap();
        let ex = execute_plan(&plan(&[(1, &[]), (2, &[1]), (3, &[2])]), "t", &web, &b, None, &config()).unwrap();
        assert!(ex.results[&1].is_ok());
        assert!(ex.results[&2].answer_text.contains("model offline"));
        assert_eq!(ex.results[&3].status, SubtaskStatus::Failed);
        assert_eq!(ex.results[&3].blocked_by, Some(2));
        assert!(ex.event_seq(3, EventKind::Started).is_none());
    }

    #[test]
    fn dependency_summaries_reach_dependents() {
        let mut scripts: Vec<Script> = (1..=3).map(|i| answer_script(i, &format!("found {i}"))).collect();
        scripts.push(Script {
            select: Some("Subtask 4 (".into()),
            steps: vec![ScriptStep {
                expect: Some("subtask 2 [ok]: found 2\nsubtask 3 [ok]: found 3".into()),
                answer: Some("merged".into()),
                ..Default::default()
            }],
            ..Default::default()
        });
        let b = ScriptedBackend::new(scripts).unwrap();
        let ex = execute_plan(
            &plan(&[(1, &[]), (2, &[1]), (3, &[1]), (4, &[2, 3])]),
            "t",
            &web,
            &b,
            None,
            &config(),
        )
        .unwrap();
        assert!(ex.all_ok(), "{:?}", ex.results[&4]);
        assert_eq!(ex.waves, vec![vec![1], vec![2, 3], vec![4]]);
        assert_eq!(ex.results[&4].answer_text, "merged");
    }

    #[test]
    fn tool_calls_are_budgeted_per_subtask() {
        let calls = |id: u32| Script {
            select: Some(format!("Subtask {id} (")),
            steps: vec![ScriptStep {
                calls: vec![ScriptedCall {
                    tool: "web_search".into(),
                    arguments: serde_json::json!({"query": "x"}).as_object().unwrap().clone(),
                }],
                ..Default::default()
            }],
            repeat_last: true,
            ..Default::default()
        };
        let b = ScriptedBackend::new(vec![calls(1), calls(2)]).unwrap();
        let cfg = ExecutionConfig {
            budget: LoopBudget {
                max_tool_iterations: 3,
                initial_k: 10,
            },
            ..config()
        };
        let ex = execute_plan(&plan(&[(1, &[]), (2, &[])]), "t", &web, &b, None, &cfg).unwrap();
        for r in ex.results.values() {
            assert!(r.budget_exhausted);
            assert_eq!(r.trace_slice.len(), 3);
            assert!(r.trace_slice.iter().all(|e| e.subtask_id == Some(r.subtask_id)));
        }
        assert_eq!(ex.merged_trace().len(), 6);
    }
}
