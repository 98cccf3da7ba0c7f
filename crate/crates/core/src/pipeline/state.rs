use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use uuid::Uuid;

use crate::memory::SearchHit;
use crate::sandbox::{ExecutionResult, StructuredError};

use super::PipelineError;

pub const DEFAULT_MAX_REPAIRS: u32 = 5;

fn present_value<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Value>, D::Error> {
    Value::deserialize(d).map(Some)
}

fn default_max_repairs() -> u32 {
    DEFAULT_MAX_REPAIRS
}

/// One task from the corpus: what to build and how to check it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub prompt: String,
    pub arg_sets: Vec<Vec<Value>>,
    #[serde(
        default,
        deserialize_with = "present_value",
        skip_serializing_if = "Option::is_none"
    )]
    pub expected_return: Option<Value>,
    #[serde(default = "default_max_repairs")]
    pub max_repairs: u32,
}

impl TaskSpec {
    pub fn new(id: impl Into<String>, prompt: impl Into<String>, arg_sets: Vec<Vec<Value>>) -> Self {
        Self {
            id: id.into(),
            prompt: prompt.into(),
            arg_sets,
            expected_return: None,
            max_repairs: DEFAULT_MAX_REPAIRS,
        }
    }

    pub fn with_expected_return(mut self, value: Value) -> Self {
        self.expected_return = Some(value);
        self
    }

    pub fn with_max_repairs(mut self, max_repairs: u32) -> Self {
        self.max_repairs = max_repairs;
        self
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |msg: &str| Err(PipelineError::InvalidTask(format!("{}: {msg}", self.id)));
        if self.id.trim().is_empty() {
            return bad("id must not be empty");
        }
        if self.prompt.trim().is_empty() {
            return bad("prompt must not be empty");
        }
        if self.arg_sets.is_empty() {
            return bad("arg_sets must not be empty");
        }
        if self.max_repairs == 0 {
            return bad("max_repairs must be positive");
        }
        Ok(())
    }

    /// Engine step budget: one generation step, one execution per round, and
    /// seven steps per repair round, with headroom.
    pub fn step_budget(&self) -> usize {
        9 * (self.max_repairs as usize + 1) + 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    InProgress,
    Success,
    FailedMaxRepairs,
    BackendError,
}

impl TaskStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::InProgress => "in_progress",
            Self::Success => "success",
            Self::FailedMaxRepairs => "failed_max_repairs",
            Self::BackendError => "backend_error",
        }
    }
}

impl std::fmt::Display for TaskStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BugReport {
    pub function_name: String,
    pub error_type: String,
    pub error_message: String,
    pub context: String,
    pub location: String,
    pub expected_behavior: String,
    pub actual_behavior: String,
    pub raw_text: String,
}

impl BugReport {
    /// Report assembled from the sandbox's structured error alone.
    pub fn from_structured(error: &StructuredError, entry: &str, args: &[Value], code: &str) -> Self {
        let function_name = error.function.clone().unwrap_or_else(|| entry.to_string());
        let location = match error.line {
            Some(line) => format!("line {line} in {function_name}"),
            None => format!("in {function_name}"),
        };
        let args_text = render_args(args);
        let mut report = Self {
            function_name,
            error_type: error.error_type.clone(),
            error_message: non_empty(&error.message, &error.error_type),
            context: excerpt(code, error.line),
            location,
            expected_behavior: format!("{entry}({args_text}) returns a result without raising an error"),
            actual_behavior: format!("{entry}({args_text}) failed with {}: {}", error.error_type, error.message),
            raw_text: String::new(),
        };
        report.raw_text = report.render();
        report
    }

    /// Report from a model's JSON reply. Missing or empty fields fall back
    /// to the structured error so error_type and error_message are never empty.
    pub fn from_json(value: &Value, response: &str, fallback: &BugReport) -> Self {
        let field = |key: &str, default: &str| -> String {
            match value.get(key) {
                Some(Value::String(s)) if !s.trim().is_empty() => s.trim().to_string(),
                Some(Value::Null) | None => default.to_string(),
                Some(Value::String(_)) => default.to_string(),
                Some(other) => other.to_string(),
            }
        };
        Self {
            function_name: field("function_name", &fallback.function_name),
            error_type: field("error_type", &fallback.error_type),
            error_message: field("error_message", &fallback.error_message),
            context: field("context", &fallback.context),
            location: field("location", &fallback.location),
            expected_behavior: field("expected_behavior", &fallback.expected_behavior),
            actual_behavior: field("actual_behavior", &fallback.actual_behavior),
            raw_text: response.trim().to_string(),
        }
    }

    pub fn render(&self) -> String {
        format!(
            "Function: {}\nError type: {}\nError message: {}\nLocation: {}\nContext:\n{}\nExpected behavior: {}\nActual behavior: {}",
            self.function_name,
            self.error_type,
            self.error_message,
            self.location,
            self.context,
            self.expected_behavior,
            self.actual_behavior
        )
    }

    /// Memory search query.
    pub fn query(&self) -> String {
        format!("{} {} {}", self.error_type, self.error_message, self.function_name)
    }

    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("report serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

fn non_empty(s: &str, default: &str) -> String {
    if s.trim().is_empty() {
        default.to_string()
    } else {
        s.to_string()
    }
}

pub(crate) fn render_args(args: &[Value]) -> String {
    args.iter().map(Value::to_string).collect::<Vec<_>>().join(", ")
}

/// Two lines either side of `line`, or the whole source when unknown.
fn excerpt(code: &str, line: Option<u32>) -> String {
    let lines: Vec<&str> = code.lines().collect();
    match line {
        Some(n) if n as usize <= lines.len() && n > 0 => {
            let idx = n as usize - 1;
            let lo = idx.saturating_sub(2);
            let hi = (idx + 3).min(lines.len());
            lines[lo..hi].join("\n")
        }
        _ => code.trim_end().to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationKind {
    Create,
    Update,
}

/// A write the run made to the bug memory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryMutation {
    pub kind: MutationKind,
    pub record_id: Uuid,
    pub error_type: String,
    pub occurrence_count: u32,
}

/// The single state value threaded through every pipeline node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    pub task: TaskSpec,
    pub function_code: Option<String>,
    pub entry_name: Option<String>,
    pub current_args: Option<Vec<Value>>,
    pub execution_result: Option<ExecutionResult>,
    pub bug_report: Option<BugReport>,
    pub search_hits: Vec<SearchHit>,
    pub filtered_hits: Vec<SearchHit>,
    pub matched_record_id: Option<Uuid>,
    /// Fix proposed by code_update, activated by code_repair.
    pub candidate_code: Option<String>,
    pub repair_count: u32,
    pub status: TaskStatus,
    pub memory_mutations: Vec<MemoryMutation>,
    pub error: Option<String>,
}

impl PipelineState {
    pub fn new(task: TaskSpec) -> Self {
        Self {
            task,
            function_code: None,
            entry_name: None,
            current_args: None,
            execution_result: None,
            bug_report: None,
            search_hits: Vec::new(),
            filtered_hits: Vec::new(),
            matched_record_id: None,
            candidate_code: None,
            repair_count: 0,
            status: TaskStatus::InProgress,
            memory_mutations: Vec::new(),
            error: None,
        }
    }

    /// Content hash that ignores run-specific values: timings, record ids
    /// and timestamps. Two runs of the same task against equally-shaped
    /// stores hash identically step by step.
    pub fn canonical_digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("state serializes");
        scrub(&mut value);
        crate::graph::state_digest(&value)
    }
}

const VOLATILE_KEYS: &[&str] = &["wall_ms", "created_at", "updated_at", "id", "record_id", "matched_record_id"];

fn scrub(value: &mut Value) {
    match value {
        Value::Object(map) => {
            for (key, v) in map.iter_mut() {
                if !VOLATILE_KEYS.contains(&key.as_str()) {
                    scrub(v);
                    continue;
                }
                // Task ids are plain strings; only UUIDs are run-specific.
                let uuid_key = key.ends_with("id");
                let volatile = !v.is_null() && (!uuid_key || v.as_str().is_some_and(|s| Uuid::parse_str(s).is_ok()));
                if volatile {
                    *v = Value::String("*".into());
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(scrub),
        _ => {}
    }
}
