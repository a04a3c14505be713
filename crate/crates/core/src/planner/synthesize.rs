use serde::{Deserialize, Serialize};

use super::execute::{summarize_with, SubtaskResult, DEFAULT_SUMMARY_CAP};
use super::plan::OutputType;
use super::PlannerError;
use crate::agent::{BackendError, LlmBackend, Message};

pub const SYNTHESIS_SYSTEM_PROMPT: &str =
    "You merge the results of completed subtasks into the final deliverable for the user.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Synthesis {
    pub answer: String,
    /// Artifact paths from all subtasks, by subtask id, without duplicates.
    pub manifest: Vec<String>,
}

fn output_directive(output_type: OutputType) -> &'static str {
    match output_type {
        OutputType::Spreadsheet => {
            "The deliverable is a spreadsheet. Describe the workbook that was produced and what it contains."
        }
        OutputType::Text => "The deliverable is a text answer. Answer the task directly, citing sheets and cells.",
        OutputType::Document => "The deliverable is a document. Describe the document that was produced.",
        OutputType::Both => {
            "The deliverable is a spreadsheet plus a written answer. Answer the task and describe the files produced."
        }
    }
}

pub fn artifact_manifest(results: &[SubtaskResult]) -> Vec<String> {
    let mut sorted: Vec<&SubtaskResult> = results.iter().collect();
    sorted.sort_by_key(|r| r.subtask_id);
    let mut out: Vec<String> = Vec::new();
    for a in sorted.iter().flat_map(|r| &r.artifacts) {
        if !out.contains(a) {
            out.push(a.clone());
        }
    }
    out
}

pub fn synthesis_prompt(task: &str, results: &[SubtaskResult], output_type: OutputType, cap: usize) -> String {
    format!(
        "Combine the subtask results into the final answer.\nTask: {task}\nOutput type: {}\n{}\n\nSubtask results:\n{}",
        output_type.as_str(),
        output_directive(output_type),
        summarize_with(results, cap)
    )
}

pub fn synthesize(
    task: &str,
    results: &[SubtaskResult],
    output_type: OutputType,
    backend: &dyn LlmBackend,
) -> Result<Synthesis, PlannerError> {
    synthesize_with(task, results, output_type, backend, DEFAULT_SUMMARY_CAP)
}

/// Makes exactly one backend call over the task and the digest of all results.
pub fn synthesize_with(
    task: &str,
    results: &[SubtaskResult],
    output_type: OutputType,
    backend: &dyn LlmBackend,
    cap: usize,
) -> Result<Synthesis, PlannerError> {
    let messages = vec![
        Message::system(SYNTHESIS_SYSTEM_PROMPT),
        Message::user(synthesis_prompt(task, results, output_type, cap)),
    ];
    let answer = backend.step(&messages, &[])?.text();
    if answer.trim().is_empty() {
        return Err(BackendError::InvalidResponse("synthesis reply has no text".into()).into());
    }
    Ok(Synthesis {
        answer,
        manifest: artifact_manifest(results),
    })
}
