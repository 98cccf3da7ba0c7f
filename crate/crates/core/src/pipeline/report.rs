use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::graph::ExecutionTrace;

use super::state::{MemoryMutation, TaskStatus};
use super::{PipelineConfig, TaskOutcome};

pub const MEMORY_BRANCH_RULE: &str = "update the top hit when its similarity >= tau, otherwise create";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub k: usize,
    pub tau: f64,
    pub timeout_s: f64,
    pub max_repairs: u32,
    pub memory_branch_rule: String,
    pub model_id: String,
}

/// Machine-readable summary of one task run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub task_id: String,
    pub status: TaskStatus,
    pub repairs_used: u32,
    pub final_code: Option<String>,
    pub entry_name: Option<String>,
    pub final_return: Option<Value>,
    pub last_error_type: Option<String>,
    pub trace: ExecutionTrace,
    pub memory_mutations: Vec<MemoryMutation>,
    pub wall_ms: f64,
    pub config: ReportConfig,
    pub error: Option<String>,
}

impl RunReport {
    pub fn new(outcome: &TaskOutcome, config: &PipelineConfig, model_id: &str) -> Self {
        let state = &outcome.final_state;
        let result = state.execution_result.as_ref();
        Self {
            task_id: state.task.id.clone(),
            status: state.status,
            repairs_used: outcome.repairs_used,
            final_code: state.function_code.clone(),
            entry_name: state.entry_name.clone(),
            final_return: result.and_then(|r| r.return_value.clone()),
            last_error_type: result.and_then(|r| r.error_type()).map(str::to_string),
            trace: outcome.trace.clone(),
            memory_mutations: state.memory_mutations.clone(),
            wall_ms: outcome.wall_ms,
            config: ReportConfig {
                k: config.k,
                tau: config.tau,
                timeout_s: config.timeout_s,
                max_repairs: state.task.max_repairs,
                memory_branch_rule: MEMORY_BRANCH_RULE.to_string(),
                model_id: model_id.to_string(),
            },
            error: state.error.clone(),
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
