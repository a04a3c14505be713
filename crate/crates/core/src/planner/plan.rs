use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const MAX_SUBTASKS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecutorType {
    Search,
    Excel,
    Io,
    Web,
    Validation,
    Ocr,
}

impl ExecutorType {
    pub const ALL: [ExecutorType; 6] = [
        ExecutorType::Search,
        ExecutorType::Excel,
        ExecutorType::Io,
        ExecutorType::Web,
        ExecutorType::Validation,
        ExecutorType::Ocr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExecutorType::Search => "search",
            ExecutorType::Excel => "excel",
            ExecutorType::Io => "io",
            ExecutorType::Web => "web",
            ExecutorType::Validation => "validation",
            ExecutorType::Ocr => "ocr",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl std::fmt::Display for ExecutorType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputType {
    Spreadsheet,
    Text,
    Document,
    Both,
}

impl OutputType {
    pub fn as_str(self) -> &'static str {
        match self {
            OutputType::Spreadsheet => "spreadsheet",
            OutputType::Text => "text",
            OutputType::Document => "document",
            OutputType::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            OutputType::Spreadsheet,
            OutputType::Text,
            OutputType::Document,
            OutputType::Both,
        ]
        .into_iter()
        .find(|t| t.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subtask {
    pub id: u32,
    #[serde(rename = "type")]
    pub kind: ExecutorType,
    pub description: String,
    #[serde(default)]
    pub dependencies: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub output_type: OutputType,
    pub subtasks: Vec<Subtask>,
}

impl Plan {
    /// Every violated invariant, in a stable order.
    pub fn violations(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let n = self.subtasks.len();
        if n == 0 || n > MAX_SUBTASKS {
            errs.push(format!("plan has {n} subtasks; between 1 and {MAX_SUBTASKS} are allowed"));
        }
        let mut ids = BTreeSet::new();
        for s in &self.subtasks {
            if s.id < 1 {
                errs.push(format!("subtask id {} must be ≥ 1", s.id));
            }
            if !ids.insert(s.id) {
                errs.push(format!("duplicate subtask id {}", s.id));
            }
        }
        for s in &self.subtasks {
            for d in &s.dependencies {
                if *d == s.id {
                    errs.push(format!("subtask {} depends on itself", s.id));
                } else if !ids.contains(d) {
                    errs.push(format!("subtask {} depends on unknown subtask {d}", s.id));
                }
            }
        }
        if errs.is_empty() && self.waves().is_none() {
            errs.push("dependency graph has a cycle".into());
        }
        errs
    }

    pub fn validate(&self) -> Result<(), Vec<String>> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }

    pub fn subtask(&self, id: u32) -> Option<&Subtask> {
        self.subtasks.iter().find(|s| s.id == id)
    }

    /// Scheduling waves: wave k holds the subtasks whose longest dependency
    /// chain has length k, ids ascending. `None` when the graph is cyclic.
    pub fn waves(&self) -> Option<Vec<Vec<u32>>> {
        let deps: BTreeMap<u32, &Vec<u32>> = self.subtasks.iter().map(|s| (s.id, &s.dependencies)).collect();
        let mut level: BTreeMap<u32, usize> = BTreeMap::new();
        while level.len() < deps.len() {
            let mut progressed = false;
            for (&id, ds) in &deps {
                if level.contains_key(&id) {
                    continue;
                }
                if ds.iter().all(|d| level.contains_key(d)) {
                    let l = ds.iter().map(|d| level[d] + 1).max().unwrap_or(0);
                    level.insert(id, l);
                    progressed = true;
                }
            }
            if !progressed {
                return None;
            }
        }
        let depth = level.values().copied().max().map_or(0, |m| m + 1);
        let mut waves = vec![Vec::new(); depth];
        for (id, l) in level {
            waves[l].push(id);
        }
        Some(waves)
    }

    /// Every subtask that depends on `id`, directly or transitively.
    pub fn dependents(&self, id: u32) -> BTreeSet<u32> {
        let mut out = BTreeSet::new();
        let mut frontier = vec![id];
        while let Some(cur) = frontier.pop() {
            for s in &self.subtasks {
                if s.dependencies.contains(&cur) && out.insert(s.id) {
                    frontier.push(s.id);
                }
            }
        }
        out
    }
}

/// The outermost `{ … }` of a reply, tolerating code fences and prose.
fn json_object_span(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    (end > start).then(|| &text[start..=end])
}

/// Parses and validates a plan from model output. Errors are listed one per
/// problem so they can be fed back for repair.
pub fn parse_plan(text: &str) -> Result<Plan, Vec<String>> {
    let body = json_object_span(text).ok_or_else(|| vec!["reply contains no JSON object".to_string()])?;
    let raw: Value = serde_json::from_str(body).map_err(|e| vec![format!("invalid JSON: {e}")])?;
    let mut errs = Vec::new();
    let output_type = match raw.get("output_type").and_then(Value::as_str) {
        Some(s) => OutputType::parse(s).or_else(|| {
            errs.push(format!("unknown output_type {s:?}"));
            None
        }),
        None => {
            errs.push("missing output_type".into());
            None
        }
    };
    let mut subtasks = Vec::new();
    match raw.get("subtasks").and_then(Value::as_array) {
        None => errs.push("missing subtasks array".into()),
        Some(items) => {
            for (i, item) in items.iter().enumerate() {
                let id = item.get("id").and_then(Value::as_u64);
                let kind = item.get("type").and_then(Value::as_str);
                let description = item.get("description").and_then(Value::as_str);
                let deps = match item.get("dependencies") {
                    None | Some(Value::Null) => Some(Vec::new()),
                    Some(Value::Array(a)) => a
                        .iter()
                        .map(|d| d.as_u64().and_then(|d| u32::try_from(d).ok()))
                        .collect::<Option<Vec<u32>>>(),
                    Some(_) => None,
                };
                let id = match id.and_then(|v| u32::try_from(v).ok()) {
                    Some(id) => id,
                    None => {
                        errs.push(format!("subtask #{} has no integer id", i + 1));
                        continue;
                    }
                };
                let kind = match kind.map(|k| (k, ExecutorType::parse(k))) {
                    Some((_, Some(k))) => k,
                    Some((k, None)) => {
                        errs.push(format!("subtask {id} has unknown type {k:?}"));
                        continue;
                    }
                    None => {
                        errs.push(format!("subtask {id} has no type"));
                        continue;
                    }
                };
                let Some(deps) = deps else {
                    errs.push(format!("subtask {id} dependencies must be a list of ids"));
                    continue;
                };
                subtasks.push(Subtask {
                    id,
                    kind,
                    description: description.unwrap_or_default().to_string(),
                    dependencies: deps,
                });
            }
        }
    }
    let Some(output_type) = output_type else {
        return Err(errs);
    };
    let plan = Plan { output_type, subtasks };
    errs.extend(plan.violations());
    if errs.is_empty() {
        Ok(plan)
    } else {
        Err(errs)
    }
}
