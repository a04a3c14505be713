//! Fixture loaders and independent reference implementations shared by the
//! integration tests and the acceptance suite.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{json, Map, Value};

use sheetrag_core::agent::{
    run_agent, AgentOptions, BackendError, Clock, ImageContent, ImagePart, LlmBackend, LoopBudget, Message, Part,
    ResultChunk, Role, Script, ScriptStep, ScriptedBackend, ScriptedCall, Tool, ToolError, ToolOutput, ToolRegistry,
    ToolResult, ToolSchema,
};
use sheetrag_core::chunker::{chunk_workbook, ChunkConfig, ChunkKind};
use sheetrag_core::executors::{check_balance_sheet, check_debit_credit};
use sheetrag_core::index::{build_index, FusionConfig, Index, MockEmbedder, RankedList};
use sheetrag_core::planner::{EventKind, Execution, ExecutorType, OutputType, Plan, Subtask, SubtaskStatus};
use sheetrag_core::workbook::ingest_path;

pub const EPS: f64 = 1e-12;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn index_of(fixture_name: &str) -> Arc<Index> {
    let wb = ingest_path(&fixture(fixture_name)).expect("fixture ingests");
    let chunks = chunk_workbook(&wb, &ChunkConfig::default()).expect("fixture chunks");
    Arc::new(build_index(chunks, Arc::new(MockEmbedder::default())).expect("fixture indexes"))
}

pub fn toy_index() -> Arc<Index> {
    index_of("toy_ledger.wb.json")
}

pub fn suite_index() -> Arc<Index> {
    index_of("vendor_invoices.wb.json")
}

pub fn scripted(name: &str) -> ScriptedBackend {
    ScriptedBackend::from_path(&fixture(&format!("scripts/{name}"))).expect("script fixture loads")
}

// ---------------------------------------------------------------- fusion

/// Lists of distinct ids drawn from a small pool so that overlaps are common.
pub fn random_lists(rng: &mut impl Rng) -> Vec<RankedList> {
    let pool: Vec<String> = (0..rng.gen_range(1..40)).map(|i| format!("c{i:02}")).collect();
    let n_lists = rng.gen_range(1..6);
    (0..n_lists)
        .map(|l| {
            let mut ids = pool.clone();
            ids.shuffle(rng);
            ids.truncate(rng.gen_range(0..=pool.len()));
            let mut score = 1.0;
            let entries = ids
                .into_iter()
                .map(|id| {
                    score -= rng.gen_range(0.0..0.01);
                    (id, score)
                })
                .collect();
            RankedList::new(format!("list{l}"), entries)
        })
        .collect()
}

/// Scores every id by scanning each list for its position; sorted by score
/// descending then id ascending.
pub fn brute_force_rrf(lists: &[RankedList], k: u32, top_k: usize) -> Vec<(String, f64)> {
    let ids: BTreeSet<&str> = lists.iter().flat_map(|l| l.entries.iter().map(|(id, _)| id.as_str())).collect();
    let mut scored: Vec<(String, f64)> = ids
        .into_iter()
        .map(|id| {
            let mut s = 0.0;
            for l in lists {
                if let Some(p) = l.entries.iter().position(|(x, _)| x == id) {
                    s += 1.0 / (k as f64 + (p + 1) as f64);
                }
            }
            (id.to_string(), s)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.truncate(top_k);
    scored
}

pub fn compare_fused(got: &[(String, f64)], want: &[(String, f64)]) -> Result<(), String> {
    if got.len() != want.len() {
        return Err(format!("length {} vs {}", got.len(), want.len()));
    }
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        if (g.1 - w.1).abs() > EPS {
            return Err(format!("rank {}: score {} vs {}", i + 1, g.1, w.1));
        }
        if g.0 != w.0 {
            return Err(format!("rank {}: id {} vs {}", i + 1, g.0, w.0));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- metrics

fn gains(ranking: &[String], relevant: &BTreeSet<String>, k: usize) -> Vec<f64> {
    let mut seen = Vec::new();
    let mut out = Vec::new();
    for id in ranking.iter().take(k) {
        let first = !seen.contains(id);
        seen.push(id.clone());
        out.push(if first && relevant.contains(id) { 1.0 } else { 0.0 });
    }
    out
}

pub fn ref_recall(ranking: &[String], relevant: &BTreeSet<String>, k: usize) -> f64 {
    gains(ranking, relevant, k).iter().sum::<f64>() / relevant.len() as f64
}

pub fn ref_ndcg(ranking: &[String], relevant: &BTreeSet<String>, k: usize) -> f64 {
    let dcg: f64 = gains(ranking, relevant, k)
        .iter()
        .enumerate()
        .map(|(i, g)| g / ((i + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..relevant.len().min(k)).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    dcg / ideal
}

pub fn ref_map(ranking: &[String], relevant: &BTreeSet<String>, k: usize) -> f64 {
    let g = gains(ranking, relevant, k);
    let mut hits = 0.0;
    let mut total = 0.0;
    for (i, x) in g.iter().enumerate() {
        if *x > 0.0 {
            hits += 1.0;
            total += hits / (i + 1) as f64;
        }
    }
    total / relevant.len().min(k) as f64
}

/// A ranking possibly containing repeats and irrelevant ids, a non-empty
/// relevant set and a cutoff.
pub fn random_metric_instance(rng: &mut impl Rng) -> (Vec<String>, BTreeSet<String>, usize) {
    let pool = rng.gen_range(1..30);
    let ranking: Vec<String> = (0..rng.gen_range(0..25)).map(|_| format!("d{}", rng.gen_range(0..pool))).collect();
    let mut relevant = BTreeSet::new();
    for _ in 0..rng.gen_range(1..8) {
        relevant.insert(format!("d{}", rng.gen_range(0..pool + 5)));
    }
    (ranking, relevant, rng.gen_range(1..30))
}

// ---------------------------------------------------------------- images

fn inline_chunk(rng: &mut impl Rng, tag: &str) -> ResultChunk {
    ResultChunk {
        chunk_id: format!("wb/S/image/B2/{tag}"),
        kind: ChunkKind::Image,
        sheet: "S".into(),
        location: "S!B2:B2".into(),
        row_span: (2, 2),
        col_span: (2, 2),
        headers: Vec::new(),
        text: format!("sheet=S image {tag}"),
        score: 0.5,
        image: Some(ImageContent::Inline {
            image_id: tag.into(),
            encoding: "png".into(),
            alt_text: format!("chart {tag}"),
            payload: (0..rng.gen_range(1..8)).map(|_| rng.gen()).collect(),
        }),
    }
}

/// Random histories mixing user text, assistant calls, tool results with and
/// without inline images, and standalone image parts.
pub fn random_history(rng: &mut impl Rng) -> Vec<Message> {
    let mut msgs = vec![Message::system("sys"), Message::user("question")];
    for i in 0..rng.gen_range(0..12) {
        msgs.push(Message::assistant_calls(vec![sheetrag_core::agent::ToolCall::new(
            format!("c{i}"),
            "search_images",
            json!({"query": "chart"}),
        )]));
        let mut content = Vec::new();
        let chunks = (0..rng.gen_range(0..3)).map(|j| inline_chunk(rng, &format!("img{i}-{j}"))).collect();
        content.push(Part::ToolResult(ToolResult {
            call_id: format!("c{i}"),
            ok: true,
            chunks,
            output: None,
            artifacts: Vec::new(),
            error: None,
        }));
        if rng.gen_bool(0.3) {
            content.push(Part::Image(ImagePart {
                location: "S!B2".into(),
                content: inline_chunk(rng, &format!("part{i}")).image.unwrap(),
            }));
        }
        msgs.push(Message::new(Role::Tool, content));
        if rng.gen_bool(0.2) {
            msgs.push(Message::assistant_text("thinking"));
        }
    }
    msgs
}

/// At most one tool message carries inline payloads, and it is the latest
/// tool message that carried any before pruning, left unchanged.
pub fn check_prune(before: &[Message], after: &[Message]) -> Result<(), String> {
    if before.len() != after.len() {
        return Err("message count changed".into());
    }
    let carriers: Vec<usize> = after
        .iter()
        .enumerate()
        .filter(|(_, m)| m.inline_image_count() > 0)
        .map(|(i, _)| i)
        .collect();
    if carriers.len() > 1 {
        return Err(format!("{} messages still carry image payloads", carriers.len()));
    }
    let latest = before.iter().rposition(|m| m.role == Role::Tool && m.inline_image_count() > 0);
    if carriers.first().copied() != latest {
        return Err(format!("payloads kept at {carriers:?}, latest carrier was {latest:?}"));
    }
    for (i, (b, a)) in before.iter().zip(after).enumerate() {
        if Some(i) == latest || b.role != Role::Tool {
            if a != b {
                return Err(format!("message {i} changed"));
            }
        } else if b.content.len() != a.content.len() {
            return Err(format!("message {i} lost parts"));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- plans

const TYPES: [ExecutorType; 6] = [
    ExecutorType::Search,
    ExecutorType::Excel,
    ExecutorType::Io,
    ExecutorType::Web,
    ExecutorType::Validation,
    ExecutorType::Ocr,
];

/// A random acyclic plan of `n` subtasks with shuffled ids; edges only point
/// from later to earlier nodes of a hidden topological order.
pub fn random_plan(rng: &mut impl Rng, n: usize) -> Plan {
    let mut ids: Vec<u32> = (1..=n as u32).collect();
    ids.shuffle(rng);
    let subtasks = (0..n)
        .map(|i| {
            let deps = (0..i).filter(|_| rng.gen_bool(0.35)).map(|j| ids[j]).collect();
            Subtask {
                id: ids[i],
                kind: TYPES[rng.gen_range(0..TYPES.len())],
                description: format!("step {}", ids[i]),
                dependencies: deps,
            }
        })
        .collect();
    Plan {
        output_type: OutputType::Text,
        subtasks,
    }
}

/// Longest dependency chain below each subtask, by memoized recursion.
pub fn ref_levels(plan: &Plan) -> BTreeMap<u32, usize> {
    fn level(plan: &Plan, id: u32, memo: &mut BTreeMap<u32, usize>) -> usize {
        if let Some(l) = memo.get(&id) {
            return *l;
        }
        let deps = plan.subtasks.iter().find(|s| s.id == id).unwrap().dependencies.clone();
        let l = deps.iter().map(|d| level(plan, *d, memo) + 1).max().unwrap_or(0);
        memo.insert(id, l);
        l
    }
    let mut memo = BTreeMap::new();
    for s in &plan.subtasks {
        level(plan, s.id, &mut memo);
    }
    memo
}

/// Independent validity check: 1..=6 subtasks, positive unique ids, known
/// dependencies, no self edges and no cycles (Kahn elimination).
pub fn ref_plan_valid(plan: &Plan) -> bool {
    let n = plan.subtasks.len();
    if n == 0 || n > 6 {
        return false;
    }
    let ids: BTreeSet<u32> = plan.subtasks.iter().map(|s| s.id).collect();
    if ids.len() != n || ids.contains(&0) {
        return false;
    }
    let mut indeg: HashMap<u32, usize> = HashMap::new();
    for s in &plan.subtasks {
        let deps: BTreeSet<u32> = s.dependencies.iter().copied().collect();
        if deps.iter().any(|d| !ids.contains(d) || *d == s.id) {
            return false;
        }
        indeg.insert(s.id, deps.len());
    }
    let mut done = 0;
    let mut ready: Vec<u32> = indeg.iter().filter(|(_, d)| **d == 0).map(|(id, _)| *id).collect();
    while let Some(id) = ready.pop() {
        done += 1;
        for s in &plan.subtasks {
            if s.dependencies.contains(&id) {
                let d = indeg.get_mut(&s.id).unwrap();
                let before = *d;
                *d -= s.dependencies.iter().filter(|x| **x == id).count().min(1);
                if before > 0 && *d == 0 {
                    ready.push(s.id);
                }
            }
        }
    }
    done == n
}

/// Expected outcome of each subtask when the subtasks in `failing` fail on
/// their own: blocked when any dependency did not succeed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    Failed,
    Blocked,
}

pub fn ref_outcomes(plan: &Plan, failing: &BTreeSet<u32>) -> BTreeMap<u32, Outcome> {
    let levels = ref_levels(plan);
    let mut order: Vec<&Subtask> = plan.subtasks.iter().collect();
    order.sort_by_key(|s| (levels[&s.id], s.id));
    let mut out = BTreeMap::new();
    for s in order {
        let o = if s.dependencies.iter().any(|d| out[d] != Outcome::Ok) {
            Outcome::Blocked
        } else if failing.contains(&s.id) {
            Outcome::Failed
        } else {
            Outcome::Ok
        };
        out.insert(s.id, o);
    }
    out
}

/// Scripts answering each subtask, or failing it when listed in `failing`.
pub fn subtask_backend(plan: &Plan, failing: &BTreeSet<u32>) -> ScriptedBackend {
    let scripts = plan
        .subtasks
        .iter()
        .map(|s| Script {
            name: Some(format!("subtask {}", s.id)),
            select: Some(format!("Subtask {} (", s.id)),
            steps: vec![if failing.contains(&s.id) {
                ScriptStep {
                    fail: Some(format!("induced failure {}", s.id)),
                    ..Default::default()
                }
            } else {
                ScriptStep {
                    answer: Some(format!("done {}", s.id)),
                    ..Default::default()
                }
            }],
            repeat_last: false,
        })
        .collect();
    ScriptedBackend::new(scripts).unwrap()
}

/// Checks an execution log against the plan: waves equal the longest-chain
/// levels, every dependency finished before its dependent started, and
/// statuses follow the failure-propagation rule.
pub fn check_schedule(plan: &Plan, exec: &Execution, failing: &BTreeSet<u32>) -> Result<(), String> {
    let levels = ref_levels(plan);
    let mut want_waves: Vec<Vec<u32>> = vec![Vec::new(); levels.values().max().map_or(0, |m| m + 1)];
    for (id, l) in &levels {
        want_waves[*l].push(*id);
    }
    if exec.waves != want_waves {
        return Err(format!("waves {:?}, expected {want_waves:?}", exec.waves));
    }
    let outcomes = ref_outcomes(plan, failing);
    for s in &plan.subtasks {
        let r = exec.results.get(&s.id).ok_or(format!("subtask {} has no result", s.id))?;
        let started = exec.event_seq(s.id, EventKind::Started);
        let finished = exec.event_seq(s.id, EventKind::Finished);
        let blocked = exec.event_seq(s.id, EventKind::Blocked);
        match outcomes[&s.id] {
            Outcome::Blocked => {
                if started.is_some() || blocked.is_none() || r.status != SubtaskStatus::Failed {
                    return Err(format!("subtask {} should be blocked without running", s.id));
                }
                let by = r.blocked_by.ok_or(format!("subtask {} lacks blocked_by", s.id))?;
                if !s.dependencies.contains(&by) || outcomes[&by] == Outcome::Ok {
                    return Err(format!("subtask {} blocked by {by}, which did not fail", s.id));
                }
            }
            o => {
                let (st, fin) = match (started, finished) {
                    (Some(a), Some(b)) if a < b => (a, b),
                    _ => return Err(format!("subtask {} lacks ordered start/finish events", s.id)),
                };
                let _ = fin;
                let want = if o == Outcome::Ok { SubtaskStatus::Ok } else { SubtaskStatus::Failed };
                if r.status != want || blocked.is_some() {
                    return Err(format!("subtask {} status {:?}, expected {want:?}", s.id, r.status));
                }
                for d in &s.dependencies {
                    let dep_done = exec.event_seq(*d, EventKind::Finished).ok_or(format!("dependency {d} never finished"))?;
                    if dep_done >= st {
                        return Err(format!("subtask {} started before dependency {d} finished", s.id));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Tool that returns only once `parties` callers are inside it at the same
/// time, or fails after the timeout.
pub struct Rendezvous {
    pub parties: usize,
    pub timeout: Duration,
    state: Arc<(Mutex<usize>, Condvar)>,
}

impl Rendezvous {
    pub fn new(parties: usize, timeout: Duration) -> Self {
        Rendezvous {
            parties,
            timeout,
            state: Arc::new((Mutex::new(0), Condvar::new())),
        }
    }
}

impl Tool for Rendezvous {
    fn schema(&self) -> ToolSchema {
        ToolSchema {
            name: "rendezvous".into(),
            description: "waits for the sibling subtask".into(),
            parameters: Vec::new(),
        }
    }

    fn call(&self, _: &Map<String, Value>) -> Result<ToolOutput, ToolError> {
        let (lock, cv) = &*self.state;
        let mut arrived = lock.lock().unwrap();
        *arrived += 1;
        cv.notify_all();
        let (guard, res) = cv.wait_timeout_while(arrived, self.timeout, |a| *a < self.parties).unwrap();
        drop(guard);
        if res.timed_out() {
            return Err(ToolError::Failed("sibling never arrived".into()));
        }
        Ok(ToolOutput::value(json!("met")))
    }
}

pub fn diamond_plan() -> Plan {
    let st = |id: u32, kind, deps: &[u32]| Subtask {
        id,
        kind,
        description: format!("part {id}"),
        dependencies: deps.to_vec(),
    };
    Plan {
        output_type: OutputType::Text,
        subtasks: vec![
            st(1, ExecutorType::Search, &[]),
            st(2, ExecutorType::Excel, &[1]),
            st(3, ExecutorType::Validation, &[1]),
            st(4, ExecutorType::Io, &[2, 3]),
        ],
    }
}

/// Subtasks 2 and 3 each call the rendezvous tool before answering; 4
/// requires both summaries in its prompt.
pub fn diamond_backend() -> ScriptedBackend {
    let answer = |text: &str| ScriptStep {
        answer: Some(text.into()),
        ..Default::default()
    };
    let meet = ScriptStep {
        calls: vec![ScriptedCall {
            tool: "rendezvous".into(),
            arguments: Map::new(),
        }],
        ..Default::default()
    };
    let script = |id: u32, steps: Vec<ScriptStep>| Script {
        name: Some(format!("subtask {id}")),
        select: Some(format!("Subtask {id} (")),
        steps,
        repeat_last: false,
    };
    ScriptedBackend::new(vec![
        script(1, vec![answer("root ready")]),
        script(
            2,
            vec![
                meet.clone(),
                ScriptStep {
                    expect: Some("\"met\"".into()),
                    ..answer("left branch")
                },
            ],
        ),
        script(
            3,
            vec![
                meet,
                ScriptStep {
                    expect: Some("\"met\"".into()),
                    ..answer("right branch")
                },
            ],
        ),
        script(
            4,
            vec![ScriptStep {
                expect: Some("subtask 2 [ok]: left branch\nsubtask 3 [ok]: right branch".into()),
                ..answer("joined")
            }],
        ),
    ])
    .unwrap()
}

pub fn rendezvous_tools(r: Arc<Rendezvous>) -> impl Fn(ExecutorType) -> Result<ToolRegistry, sheetrag_core::planner::PlannerError> + Sync {
    move |_| {
        let mut reg = ToolRegistry::new();
        reg.register(r.clone());
        Ok(reg)
    }
}

// ---------------------------------------------------------------- plan fuzz

fn plan_json(subtasks: &[Value], output_type: &str) -> Value {
    json!({"output_type": output_type, "subtasks": subtasks})
}

fn subtask_json(id: i64, kind: &str, deps: &[i64]) -> Value {
    json!({"id": id, "type": kind, "description": format!("work item {id}"), "dependencies": deps})
}

fn valid_subtasks(rng: &mut impl Rng, n: usize) -> Vec<Value> {
    let names = ["search", "excel", "io", "web", "validation", "ocr"];
    (1..=n as i64)
        .map(|id| {
            let deps: Vec<i64> = (1..id).filter(|_| rng.gen_bool(0.4)).collect();
            subtask_json(id, names[rng.gen_range(0..names.len())], &deps)
        })
        .collect()
}

fn wrap(rng: &mut impl Rng, body: String) -> String {
    match rng.gen_range(0..4) {
        0 => body,
        1 => format!("Here is the plan:\n{body}"),
        2 => format!("```json\n{body}\n```"),
        _ => format!("{body}\nLet me know if you need changes."),
    }
}

/// One planner reply and whether it describes a valid plan by construction.
pub fn adversarial_reply(rng: &mut impl Rng) -> (String, bool) {
    let n = rng.gen_range(1..=6);
    let mut subs = valid_subtasks(rng, n);
    let out = ["text", "spreadsheet", "document", "both"][rng.gen_range(0..4)];
    let (value, valid) = match rng.gen_range(0..11) {
        0 | 1 => (plan_json(&subs, out), true),
        2 => {
            let k = rng.gen_range(7..=10);
            (plan_json(&valid_subtasks(rng, k), out), false)
        }
        3 => {
            let a = rng.gen_range(1..=n.max(2)) as i64;
            if n < 2 {
                subs = vec![subtask_json(1, "search", &[2]), subtask_json(2, "excel", &[1])];
            } else {
                let b = if a == 1 { 2 } else { 1 };
                let (lo, hi) = (a.min(b), a.max(b));
                subs[(hi - 1) as usize]["dependencies"] = json!([lo]);
                subs[(lo - 1) as usize]["dependencies"] = json!([hi]);
            }
            (plan_json(&subs, out), false)
        }
        4 => {
            let i = rng.gen_range(0..n);
            subs[i]["type"] = json!(["telepathy", "database", "", "SEARCHX"][rng.gen_range(0..4)]);
            (plan_json(&subs, out), false)
        }
        5 => {
            let i = rng.gen_range(0..n);
            subs[i]["dependencies"] = json!([rng.gen_range(7..100)]);
            (plan_json(&subs, out), false)
        }
        6 => {
            let i = rng.gen_range(0..n);
            subs[i]["dependencies"] = json!([i as i64 + 1]);
            (plan_json(&subs, out), false)
        }
        7 => {
            subs.push(subs[0].clone());
            (plan_json(&subs, out), false)
        }
        8 => (plan_json(&[], out), false),
        9 => (plan_json(&subs, "spreadsheetz"), false),
        _ => {
            let text = plan_json(&subs, out).to_string();
            let cut = rng.gen_range(1..text.len());
            let garbled = match rng.gen_range(0..3) {
                0 => text[..cut].to_string(),
                1 => "I cannot plan this task.".to_string(),
                _ => text.replace('"', "'"),
            };
            return (wrap(rng, garbled), false);
        }
    };
    (wrap(rng, value.to_string()), valid)
}

pub fn planner_backend(first: &str, second: &str) -> ScriptedBackend {
    let step = |t: &str| ScriptStep {
        answer: Some(t.into()),
        ..Default::default()
    };
    ScriptedBackend::single(vec![step(first), step(second)])
}

// ---------------------------------------------------------------- agent

/// Wraps a backend and checks a predicate on every history it is shown.
pub struct Inspecting<'a, B> {
    pub inner: B,
    pub check: &'a (dyn Fn(&[Message]) -> Result<(), String> + Sync),
    pub failures: Mutex<Vec<String>>,
}

impl<B: LlmBackend> LlmBackend for Inspecting<'_, B> {
    fn step(&self, messages: &[Message], tools: &[ToolSchema]) -> Result<Message, BackendError> {
        if let Err(e) = (self.check)(messages) {
            self.failures.lock().unwrap().push(e);
        }
        self.inner.step(messages, tools)
    }
}

pub fn images_in_at_most_one_result(messages: &[Message]) -> Result<(), String> {
    let n = messages.iter().filter(|m| m.inline_image_count() > 0).count();
    if n > 1 {
        return Err(format!("{n} messages carry image payloads"));
    }
    Ok(())
}

pub const GOLDEN_QUESTION: &str = "What was EMEA revenue, and how does it compare with the group total?";

pub fn fixed_options() -> AgentOptions {
    AgentOptions {
        clock: Clock::Fixed(0),
        ..Default::default()
    }
}

/// The four-call query over the toy ledger with a masked clock.
pub fn golden_query_run() -> sheetrag_core::agent::AgentRun {
    let index = toy_index();
    let budget = LoopBudget::default();
    let fusion = FusionConfig::default();
    let reg = sheetrag_core::agent::register_search_tools(index.clone(), fusion);
    let hits = sheetrag_core::agent::bootstrap_hits(&index, GOLDEN_QUESTION, &budget, &fusion);
    run_agent(GOLDEN_QUESTION, &hits, &reg, &scripted("query_four_calls.json"), &budget, &fixed_options())
        .expect("golden query runs")
}

pub const WORKFLOW_TASK: &str = "Summarize \"Revenue\" into a workbook with a SUM total";

// ---------------------------------------------------------------- validation

/// (sheet, passes at tolerance 0.01) computed from the fixture values by hand.
pub const BALANCE_EXPECTATIONS: [(&str, bool); 3] = [("Balanced", true), ("Near Miss", true), ("Unbalanced", false)];
pub const JOURNAL_EXPECTATIONS: [(&str, bool); 3] = [("Journal", true), ("Journal Near", true), ("Journal Off", false)];

pub fn validation_outcomes(tolerance: f64) -> Vec<(String, bool, f64)> {
    let path = fixture("ledger_checks.wb.json");
    let mut out = Vec::new();
    for (sheet, _) in BALANCE_EXPECTATIONS {
        let r = check_balance_sheet(&path, sheet, "B2", "B3", "B4", tolerance).unwrap();
        out.push((sheet.to_string(), r.passed, r.difference()));
    }
    for (sheet, _) in JOURNAL_EXPECTATIONS {
        let r = check_debit_credit(&path, sheet, "B2:B7", "C2:C7", tolerance).unwrap();
        out.push((sheet.to_string(), r.passed, r.difference()));
    }
    out
}
