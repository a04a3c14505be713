use std::path::Path;

use super::explore::ExplorationContext;
use super::plan::{parse_plan, Plan};
use super::PlannerError;
use crate::agent::{LlmBackend, Message};

pub const DEFAULT_PLANNER_TEMPLATE: &str = include_str!("../../assets/planner_prompt.txt");

pub const PLANNER_SYSTEM_PROMPT: &str = "You plan spreadsheet workflows. Reply with a JSON plan only.";

const PLACEHOLDERS: [&str; 3] = ["{task}", "{output_path}", "{exploration_context}"];

/// Planner prompt with `{task}`, `{output_path}` and `{exploration_context}`
/// placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            text: DEFAULT_PLANNER_TEMPLATE.to_string(),
        }
    }
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Result<Self, PlannerError> {
        let text = text.into();
        let missing: Vec<&str> = PLACEHOLDERS.iter().copied().filter(|p| !text.contains(p)).collect();
        if !missing.is_empty() {
            return Err(PlannerError::Template(format!("missing placeholders {}", missing.join(", "))));
        }
        Ok(PromptTemplate { text })
    }

    pub fn from_path(path: &Path) -> Result<Self, PlannerError> {
        Self::new(std::fs::read_to_string(path)?)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Substitutes placeholders in one pass, so values are never rescanned.
    pub fn render(&self, task: &str, output_path: &str, exploration: &ExplorationContext) -> String {
        let context = exploration.render();
        let values = [task, output_path, context.as_str()];
        let mut out = String::with_capacity(self.text.len() + task.len() + context.len());
        let mut rest = self.text.as_str();
        while let Some((pos, i)) = PLACEHOLDERS
            .iter()
            .enumerate()
            .filter_map(|(i, p)| rest.find(p).map(|pos| (pos, i)))
            .min()
        {
            out.push_str(&rest[..pos]);
            out.push_str(values[i]);
            rest = &rest[pos + PLACEHOLDERS[i].len()..];
        }
        out.push_str(rest);
        out
    }
}

/// The planning exchange: the accepted plan and every backend reply seen.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub plan: Plan,
    pub responses: Vec<String>,
    pub repaired: bool,
}

pub fn repair_prompt(errors: &[String]) -> String {
    let mut s = String::from("The plan is invalid:\n");
    for e in errors {
        s.push_str(&format!("- {e}\n"));
    }
    s.push_str("Return a corrected JSON plan only.");
    s
}

pub fn decompose(
    task: &str,
    output_path: &str,
    exploration: &ExplorationContext,
    backend: &dyn LlmBackend,
) -> Result<Plan, PlannerError> {
    decompose_with(task, output_path, exploration, backend, &PromptTemplate::default()).map(|d| d.plan)
}

/// Asks the backend for a plan, allowing one repair round that lists the
/// validation errors of the first reply.
pub fn decompose_with(
    task: &str,
    output_path: &str,
    exploration: &ExplorationContext,
    backend: &dyn LlmBackend,
    template: &PromptTemplate,
) -> Result<Decomposition, PlannerError> {
    let mut messages = vec![
        Message::system(PLANNER_SYSTEM_PROMPT),
        Message::user(template.render(task, output_path, exploration)),
    ];
    let mut responses = Vec::new();
    let mut errors = Vec::new();
    for round in 0..2 {
        let reply = backend.step(&messages, &[])?;
        let text = reply.text();
        responses.push(text.clone());
        match parse_plan(&text) {
            Ok(plan) => {
                return Ok(Decomposition {
                    plan,
                    responses,
                    repaired: round > 0,
                })
            }
            Err(e) => errors = e,
        }
        messages.push(Message::assistant_text(text));
        messages.push(Message::user(repair_prompt(&errors)));
    }
    Err(PlannerError::PlanInvalid { errors, responses })
}
