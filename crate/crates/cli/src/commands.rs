use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sheetrag_core::agent::{
    bootstrap_hits, export_trace, import_trace, register_search_tools, run_agent, AgentAnswer, AgentError,
    AgentOptions, ImageContent, ResultChunk, TraceEntry,
};
use sheetrag_core::chunker::{chunk_workbook, ChunkConfig, ChunkKind};
use sheetrag_core::evalkit::{cost_report, read_query_set, run_retrieval_eval, write_eval_report, EvalError};
use sheetrag_core::index::{build_index, load_index, persist_index, Index, IndexError};
use sheetrag_core::planner::{run_workflow, PlannerError, WorkflowConfig};
use sheetrag_core::workbook::{a1_ref, ingest_path, ingest_xlsx, parse_range, CellRange, Workbook};

use crate::config::Config;
use crate::CliError;

fn is_workbook_file(p: &Path) -> bool {
    let name = p.file_name().map(|n| n.to_string_lossy().to_ascii_lowercase()).unwrap_or_default();
    !name.starts_with("~$") && (name.ends_with(".xlsx") || name.ends_with(".json"))
}

/// Files named directly plus workbook files found under directories, in
/// sorted order within each directory.
fn collect_inputs(path: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(path)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
        entries.sort();
        for p in entries {
            if p.is_dir() {
                collect_inputs(&p, out)?;
            } else if is_workbook_file(&p) {
                out.push(p);
            }
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

fn ingest(path: &Path) -> Result<(Workbook, Vec<String>), String> {
    if !path.is_file() {
        return Err("file not found".into());
    }
    let lower = path.to_string_lossy().to_ascii_lowercase();
    if lower.ends_with(".xlsx") {
        let out = ingest_xlsx(path).map_err(|e| e.to_string())?;
        let warnings = out.warnings().to_vec();
        Ok((out.into_workbook(), warnings))
    } else {
        ingest_path(path).map(|wb| (wb, Vec::new())).map_err(|e| e.to_string())
    }
}

pub fn index(config: &Config, inputs: &[PathBuf], out: Option<&Path>, keep_going: bool) -> Result<(), CliError> {
    if inputs.is_empty() {
        return Err(CliError::User("no inputs".into()));
    }
    let out = match out {
        Some(o) => o,
        None => config
            .index
            .as_deref()
            .ok_or_else(|| CliError::User("no output directory: pass --out or --index".into()))?,
    };
    let mut files = Vec::new();
    for p in inputs {
        collect_inputs(p, &mut files).map_err(|e| CliError::User(format!("{}: {e}", p.display())))?;
    }
    if files.is_empty() {
        return Err(CliError::User("no inputs: no workbook files found".into()));
    }
    let embedder = config.embedder()?;
    let mut chunks = Vec::new();
    let mut sheets = 0;
    let mut failures: Vec<(PathBuf, String)> = Vec::new();
    for f in &files {
        let chunked = ingest(f).and_then(|(wb, warnings)| {
            let c = chunk_workbook(&wb, &ChunkConfig::default()).map_err(|e| e.to_string())?;
            Ok((wb.sheets.len(), c, warnings))
        });
        match chunked {
            Ok((n, c, warnings)) => {
                for w in warnings {
                    eprintln!("warning: {}: {w}", f.display());
                }
                sheets += n;
                chunks.extend(c);
            }
            Err(e) => failures.push((f.clone(), e)),
        }
    }
    for (f, e) in &failures {
        eprintln!("error: {}: {e}", f.display());
    }
    let ok = files.len() - failures.len();
    if !failures.is_empty() && !keep_going {
        return Err(CliError::User(format!(
            "{} of {} input(s) failed to ingest; nothing written (use --keep-going to index the rest)",
            failures.len(),
            files.len()
        )));
    }
    if ok == 0 {
        return Err(CliError::User("no input could be ingested".into()));
    }
    let index = build_index(chunks, embedder).map_err(|e| match e {
        IndexError::DuplicateChunkId(_) => CliError::User(format!("{e} (two inputs share a file name?)")),
        e => CliError::Failure(e.to_string()),
    })?;
    persist_index(&index, out).map_err(|e| CliError::Failure(e.to_string()))?;
    let stats = index.stats();
    println!("files: {ok}");
    println!("sheets: {sheets}");
    println!("chunks: {}", stats.chunks);
    for kind in ChunkKind::ALL {
        println!("  {kind}: {}", stats.by_kind.get(&kind).copied().unwrap_or(0));
    }
    println!("index: {}", out.display());
    if !failures.is_empty() {
        return Err(CliError::User(format!(
            "partial index: {} of {} input(s) skipped",
            failures.len(),
            files.len()
        )));
    }
    Ok(())
}

fn open_index(config: &Config) -> Result<Arc<Index>, CliError> {
    let dir = config.index_dir()?;
    let index = load_index(dir, config.embedder()?).map_err(|e| match e {
        IndexError::Io(io) => CliError::User(format!("cannot open index {}: {io}", dir.display())),
        e => CliError::User(format!("{}: {e}", dir.display())),
    })?;
    Ok(Arc::new(index))
}

/// A sheet-qualified reference found in answer text.
#[derive(Debug, Clone, PartialEq)]
pub struct Citation {
    pub sheet: String,
    pub range: CellRange,
}

impl Citation {
    pub fn label(&self) -> String {
        let r = &self.range;
        if r.rows() == 1 && r.cols() == 1 {
            let cell = a1_ref(r.start_row as i64, r.start_col as i64).unwrap_or_default();
            format!("{}!{cell}", self.sheet)
        } else {
            format!("{}!{r}", self.sheet)
        }
    }
}

/// Finds `Sheet!A1` and `Sheet!A1:B2` references, quoted or not, naming one
/// of `sheets`. Order of first appearance, without duplicates.
pub fn find_citations(text: &str, sheets: &[String]) -> Vec<Citation> {
    let mut names: Vec<&String> = sheets.iter().collect();
    names.sort_by_key(|s| std::cmp::Reverse(s.len()));
    let mut out: Vec<Citation> = Vec::new();
    for (bang, _) in text.match_indices('!') {
        let before = &text[..bang];
        let sheet = names.iter().find(|name| {
            let quoted = format!("'{}'", name.replace('\'', "''"));
            before.ends_with(quoted.as_str()) || before.ends_with(name.as_str())
        });
        let Some(sheet) = sheet else { continue };
        let after = &text[bang + 1..];
        let body: String = after
            .chars()
            .take_while(|c| c.is_ascii_alphanumeric() || *c == ':' || *c == '$')
            .collect();
        let body = body.trim_end_matches(':').replace('$', "");
        let Ok(r) = parse_range(&body) else { continue };
        let c = Citation {
            sheet: sheet.to_string(),
            range: r.range,
        };
        if !out.contains(&c) {
            out.push(c);
        }
    }
    out
}

/// The smallest retrieved chunk covering the citation; the earliest on ties.
fn supporting_chunk<'a>(c: &Citation, seen: &'a [ResultChunk]) -> Option<&'a ResultChunk> {
    let span = |ch: &ResultChunk| CellRange::new(ch.row_span.0, ch.col_span.0, ch.row_span.1, ch.col_span.1);
    seen.iter()
        .filter(|ch| {
            let s = span(ch);
            ch.sheet == c.sheet
                && s.contains(c.range.start_row, c.range.start_col)
                && s.contains(c.range.end_row, c.range.end_col)
        })
        .min_by_key(|ch| {
            let s = span(ch);
            s.rows() as u64 * s.cols() as u64
        })
}

pub fn query(config: &Config, question: &str, trace_out: &Path) -> Result<(), CliError> {
    let index = open_index(config)?;
    let backend = config.backend()?;
    let budget = config.budget();
    let fusion = config.fusion();
    let registry = register_search_tools(index.clone(), fusion);
    let hits = bootstrap_hits(&index, question, &budget, &fusion);
    let run = match run_agent(question, &hits, &registry, backend.as_ref(), &budget, &AgentOptions::default()) {
        Ok(run) => run,
        Err(AgentError::BackendFailure { cause, trace, .. }) => {
            let saved = export_trace(&trace, trace_out).is_ok();
            let note = if saved {
                format!("; partial trace in {}", trace_out.display())
            } else {
                String::new()
            };
            return Err(CliError::Failure(format!(
                "backend failure after {} tool call(s): {cause}{note}",
                trace.len()
            )));
        }
        Err(e) => return Err(CliError::User(e.to_string())),
    };
    export_trace(&run.trace, trace_out)
        .map_err(|e| CliError::Failure(format!("writing trace {}: {e}", trace_out.display())))?;
    if let AgentAnswer::BudgetExhausted { .. } = run.answer {
        eprintln!(
            "warning: tool budget of {} call(s) exhausted before a final answer",
            budget.max_tool_iterations
        );
    }
    println!("{}", run.answer.text());
    let mut sheets: Vec<String> = index.chunks().iter().map(|c| c.sheet.clone()).collect();
    sheets.sort();
    sheets.dedup();
    let seen: Vec<ResultChunk> = run
        .trace
        .all_entries()
        .flat_map(|e| e.tool_result.chunks.iter().cloned())
        .collect();
    let citations = find_citations(run.answer.text(), &sheets);
    if !citations.is_empty() {
        println!();
        println!("sources:");
        for c in citations {
            match supporting_chunk(&c, &seen) {
                Some(ch) => println!("  {}  <- {}", c.label(), ch.chunk_id),
                None => println!("  {}  (not in retrieved context)", c.label()),
            }
        }
    }
    eprintln!("trace: {} ({} tool call(s))", trace_out.display(), run.trace.len());
    Ok(())
}

pub fn workflow(config: &Config, task: &str, output_path: &str, run_dir: &Path) -> Result<(), CliError> {
    let index = open_index(config)?;
    let backend = config.backend()?;
    let mut wc = WorkflowConfig {
        explore_k: config.k,
        ..WorkflowConfig::default()
    };
    wc.execution.budget = config.budget();
    wc.execution.concurrency = config.concurrency;
    wc.execution.fusion = config.fusion();
    match run_workflow(task, output_path, index, backend.as_ref(), &wc, run_dir) {
        Ok(outcome) => {
            println!("{}", outcome.synthesis.answer);
            if !outcome.synthesis.manifest.is_empty() {
                println!();
                println!("artifacts:");
                for a in &outcome.synthesis.manifest {
                    println!("  {a}");
                }
            }
            eprintln!("run: {}", outcome.run_dir.display());
            let failed: Vec<String> = outcome
                .execution
                .results
                .values()
                .filter(|r| !r.is_ok())
                .map(|r| r.subtask_id.to_string())
                .collect();
            if !failed.is_empty() {
                return Err(CliError::Failure(format!(
                    "subtask(s) {} failed; see {}",
                    failed.join(", "),
                    run_dir.join("run.log").display()
                )));
            }
            Ok(())
        }
        Err(PlannerError::PlanInvalid { errors, responses }) => {
            for e in &errors {
                eprintln!("plan error: {e}");
            }
            for (i, r) in responses.iter().enumerate() {
                eprintln!("--- planner response {} ---\n{r}", i + 1);
            }
            Err(CliError::Failure(format!(
                "no valid plan after repair; responses saved in {}",
                run_dir.join("plan_invalid.json").display()
            )))
        }
        Err(e @ (PlannerError::BackendFailure(_) | PlannerError::Io(_))) => Err(CliError::Failure(e.to_string())),
        Err(e) => Err(CliError::User(e.to_string())),
    }
}

pub fn eval(config: &Config, queryset: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let index = open_index(config)?;
    let set = read_query_set(queryset).map_err(|e| CliError::User(format!("{}: {e}", queryset.display())))?;
    let report = run_retrieval_eval(&index, &set.queries, &config.cutoffs, &config.fusion()).map_err(|e| match e {
        EvalError::Io(_) => CliError::Failure(e.to_string()),
        e => CliError::User(e.to_string()),
    })?;
    print!("{}", report.render_table());
    if let Some(out) = out {
        write_eval_report(out, &report).map_err(|e| CliError::Failure(e.to_string()))?;
    }
    Ok(())
}

fn render_chunk(c: &ResultChunk) -> String {
    let mut s = format!("  [{}] {} {} score={:.6}", c.location, c.kind, c.chunk_id, c.score);
    match &c.image {
        Some(ImageContent::Stub { image_id, digest, .. }) => s.push_str(&format!("\n    image {image_id} digest {digest}")),
        Some(ImageContent::Inline { image_id, payload, .. }) => s.push_str(&format!(
            "\n    image {image_id} inline digest sha256:{}",
            sheetrag_core::sha256_hex(payload)
        )),
        None => {}
    }
    s
}

pub fn render_entry(e: &TraceEntry) -> String {
    let r = &e.tool_result;
    let mut lines = vec![
        format!("seq: {}", e.seq),
        format!("timestamp_ms: {}", e.timestamp_ms),
    ];
    if let Some(id) = e.subtask_id {
        lines.push(format!("subtask: {id}"));
    }
    lines.push(format!("call: {} {}", e.tool_call.call_id, e.tool_call.tool_name));
    lines.push(format!(
        "arguments: {}",
        serde_json::to_string(&e.tool_call.arguments).expect("json map serializes")
    ));
    lines.push(format!("result: ok={} chunks={}", r.ok, r.chunks.len()));
    for c in &r.chunks {
        lines.push(render_chunk(c));
    }
    if let Some(o) = &r.output {
        lines.push(format!("output: {o}"));
    }
    if !r.artifacts.is_empty() {
        lines.push(format!("artifacts: {}", r.artifacts.join(", ")));
    }
    if let Some(err) = &r.error {
        lines.push(format!("error: {err}"));
    }
    lines.push(format!("tokens: {}", e.token_estimate));
    lines.join("\n")
}

pub fn trace(path: &Path, show: Option<usize>, stats: bool) -> Result<(), CliError> {
    let entries = import_trace(path).map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;
    if let Some(n) = show {
        if n == 0 || n > entries.len() {
            return Err(CliError::User(format!("entry {n} out of range: trace has {} entries", entries.len())));
        }
        println!("entry {n} of {}", entries.len());
        println!("{}", render_entry(&entries[n - 1]));
        return Ok(());
    }
    println!("{} entries", entries.len());
    if stats {
        let report = cost_report(&[entries.as_slice()]);
        println!("tool_calls={}", report.tool_calls.mean);
        println!("tokens={}", report.tokens.mean);
        println!("latency_ms={}", report.latency_ms.mean);
        let mut by_tool: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &entries {
            *by_tool.entry(e.tool_call.tool_name.as_str()).or_default() += 1;
        }
        for (tool, n) in by_tool {
            println!("tool {tool}={n}");
        }
        let failed = entries.iter().filter(|e| !e.tool_result.ok).count();
        println!("failed_calls={failed}");
        return Ok(());
    }
    for e in &entries {
        println!(
            "{:>4} {:<12} {:<18} ok={} chunks={} {}",
            e.seq,
            e.tool_call.call_id,
            e.tool_call.tool_name,
            e.tool_result.ok,
            e.tool_result.chunks.len(),
            serde_json::to_string(&e.tool_call.arguments).expect("json map serializes")
        );
    }
    Ok(())
}
