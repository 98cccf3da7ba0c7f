//! Node handlers and routers of the repair graph.

use std::sync::LazyLock;

use regex::Regex;
use serde_json::Value;

use crate::graph::{HandlerError, NodeName};
use crate::llm::{extract_code, extract_json};
use crate::memory::filter_hits;
use crate::sandbox::{ExecutionResult, ExecutionStatus, SandboxError, StructuredError};

use super::state::{render_args, BugReport, MemoryMutation, MutationKind, PipelineState, TaskStatus};
use super::{PipelineConfig, Services};

pub const CODE_GENERATION: &str = "code_generation";
pub const CODE_EXECUTION: &str = "code_execution";
pub const BUG_ISSUE: &str = "bug_issue";
pub const MEMORY_SEARCH: &str = "memory_search";
pub const MEMORY_FILTER: &str = "memory_filter";
pub const MEMORY_CREATE: &str = "memory_create";
pub const MEMORY_UPDATE: &str = "memory_update";
pub const CODE_UPDATE: &str = "code_update";
pub const CODE_REPAIR: &str = "code_repair";

/// Upper bound on a summary stored when the model could not write one.
pub const FALLBACK_SUMMARY_CHARS: usize = 2000;

static TOP_LEVEL_DEF: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^(?:async\s+)?def\s+([A-Za-z_][A-Za-z0-9_]*)\s*\(").expect("regex"));

/// Names of top-level (unindented) function definitions, in source order.
pub fn top_level_functions(source: &str) -> Vec<String> {
    TOP_LEVEL_DEF
        .captures_iter(source)
        .map(|c| c[1].to_string())
        .collect()
}

fn backend(node: &str, err: impl std::fmt::Display) -> HandlerError {
    HandlerError::new(format!("{node}: {err}"))
}

pub fn code_generation(services: &Services, mut state: PipelineState) -> Result<PipelineState, HandlerError> {
    let response = services
        .gateway
        .complete_template("codegen", &[("task", &state.task.prompt)])
        .map_err(|e| backend(CODE_GENERATION, e))?;
    let code = extract_code(&response).map_err(|e| backend(CODE_GENERATION, e))?;
    let entry = top_level_functions(&code)
        .into_iter()
        .next()
        .ok_or_else(|| backend(CODE_GENERATION, "generated code defines no top-level function"))?;
    state.function_code = Some(code);
    state.entry_name = Some(entry);
    Ok(state)
}

fn sandbox_failure(err: SandboxError) -> Result<ExecutionResult, HandlerError> {
    match err {
        // The candidate terminated the harness itself; that is a result, not an outage.
        SandboxError::HarnessFailure(msg) => Ok(ExecutionResult {
            status: ExecutionStatus::Crash,
            stdout: String::new(),
            stderr: String::new(),
            return_value: None,
            error: Some(StructuredError::simple("HarnessFailure", msg)),
            wall_ms: 0.0,
        }),
        other => Err(backend(CODE_EXECUTION, other)),
    }
}

fn returns_match(expected: &Value, actual: &Value) -> bool {
    match (expected, actual) {
        (Value::Number(a), Value::Number(b)) => a.as_f64() == b.as_f64(),
        (Value::Array(a), Value::Array(b)) => a.len() == b.len() && a.iter().zip(b).all(|(x, y)| returns_match(x, y)),
        (Value::Object(a), Value::Object(b)) => {
            a.len() == b.len() && a.iter().all(|(k, v)| b.get(k).is_some_and(|w| returns_match(v, w)))
        }
        _ => expected == actual,
    }
}

pub fn code_execution(
    services: &Services,
    config: &PipelineConfig,
    mut state: PipelineState,
) -> Result<PipelineState, HandlerError> {
    let code = state
        .function_code
        .clone()
        .ok_or_else(|| backend(CODE_EXECUTION, "no function code in state"))?;
    let entry = state
        .entry_name
        .clone()
        .ok_or_else(|| backend(CODE_EXECUTION, "no entry function in state"))?;

    let mut last = None;
    for args in &state.task.arg_sets {
        let request = services.sandbox.request(&code, &entry, args.clone()).with_timeout(config.timeout_s);
        let result = match services.sandbox.execute(&request) {
            Ok(r) => r,
            Err(e) => sandbox_failure(e)?,
        };
        let ok = result.is_success();
        last = Some((args.clone(), result));
        if !ok {
            break;
        }
    }
    let (args, mut result) = last.expect("task validation guarantees at least one arg set");

    if result.is_success() {
        if let (Some(expected), Some(actual)) = (&state.task.expected_return, &result.return_value) {
            if !returns_match(expected, actual) {
                result.status = ExecutionStatus::Exception;
                result.error = Some(StructuredError::simple(
                    "AssertionFailure",
                    format!("expected return value {expected}, got {actual}"),
                ));
                result.return_value = None;
            }
        }
    }

    state.status = if result.is_success() {
        TaskStatus::Success
    } else if state.repair_count >= state.task.max_repairs {
        TaskStatus::FailedMaxRepairs
    } else {
        TaskStatus::InProgress
    };
    state.current_args = Some(args);
    state.execution_result = Some(result);
    Ok(state)
}

/// Success ends the run; a failure goes to bug handling until the repair
/// cap is spent.
pub fn route_after_execution(state: &PipelineState) -> NodeName {
    match &state.execution_result {
        Some(r) if r.is_success() => NodeName::end(),
        Some(_) if state.repair_count < state.task.max_repairs => NodeName::new(BUG_ISSUE),
        _ => NodeName::end(),
    }
}

pub fn bug_issue(services: &Services, mut state: PipelineState) -> Result<PipelineState, HandlerError> {
    let result = state
        .execution_result
        .as_ref()
        .ok_or_else(|| backend(BUG_ISSUE, "no execution result in state"))?;
    let error = result
        .error
        .clone()
        .unwrap_or_else(|| StructuredError::simple("UnknownError", format!("execution ended with status {}", result.status)));
    let code = state.function_code.clone().unwrap_or_default();
    let entry = state.entry_name.clone().unwrap_or_default();
    let args = state.current_args.clone().unwrap_or_default();
    let fallback = BugReport::from_structured(&error, &entry, &args, &code);

    let args_text = format!("[{}]", render_args(&args));
    let traceback = if error.traceback_text.trim().is_empty() {
        "(no traceback available)"
    } else {
        error.traceback_text.as_str()
    };
    let vars = [
        ("code", code.as_str()),
        ("args", args_text.as_str()),
        ("status", result.status.as_str()),
        ("error_type", error.error_type.as_str()),
        ("error_message", error.message.as_str()),
        ("traceback", traceback),
    ];
    let report = match services.gateway.complete_template("bug_report", &vars) {
        Ok(response) => match extract_json(&response) {
            Ok(value) => BugReport::from_json(&value, &response, &fallback),
            Err(e) => {
                log::warn!("bug report reply unusable ({e}); using structured fallback");
                fallback
            }
        },
        Err(e) => {
            log::warn!("bug report request failed ({e}); using structured fallback");
            fallback
        }
    };
    state.bug_report = Some(report);
    Ok(state)
}

pub fn memory_search(
    services: &Services,
    config: &PipelineConfig,
    mut state: PipelineState,
) -> Result<PipelineState, HandlerError> {
    let report = state
        .bug_report
        .as_ref()
        .ok_or_else(|| backend(MEMORY_SEARCH, "no bug report in state"))?;
    state.search_hits = services
        .memory
        .search(&report.query(), config.k)
        .map_err(|e| backend(MEMORY_SEARCH, e))?;
    Ok(state)
}

pub fn memory_filter(config: &PipelineConfig, mut state: PipelineState) -> Result<PipelineState, HandlerError> {
    state.filtered_hits = filter_hits(&state.search_hits, config.tau);
    state.matched_record_id = state.filtered_hits.first().map(|h| h.record.id);
    Ok(state)
}

/// A relevant prior record is updated; otherwise a new one is created.
pub fn route_after_filter(state: &PipelineState) -> NodeName {
    if state.matched_record_id.is_some() {
        NodeName::new(MEMORY_UPDATE)
    } else {
        NodeName::new(MEMORY_CREATE)
    }
}

fn truncated(text: &str) -> String {
    text.chars().take(FALLBACK_SUMMARY_CHARS).collect()
}

fn summarize(services: &Services, template: &str, vars: &[(&str, &str)], report: &BugReport) -> String {
    match services.gateway.complete_template(template, vars) {
        Ok(text) if !text.trim().is_empty() => text.trim().to_string(),
        Ok(_) => truncated(&report.raw_text),
        Err(e) => {
            log::warn!("{template} failed ({e}); storing the raw report");
            truncated(&report.raw_text)
        }
    }
}

pub fn memory_create(services: &Services, mut state: PipelineState) -> Result<PipelineState, HandlerError> {
    let report = state
        .bug_report
        .clone()
        .ok_or_else(|| backend(MEMORY_CREATE, "no bug report in state"))?;
    let summary = summarize(services, "memory_create_summary", &[("bug_report", &report.raw_text)], &report);
    let record = services
        .memory
        .create_record(&summary, &report.error_type, &report.digest())
        .map_err(|e| backend(MEMORY_CREATE, e))?;
    state.memory_mutations.push(MemoryMutation {
        kind: MutationKind::Create,
        record_id: record.id,
        error_type: record.error_type,
        occurrence_count: record.occurrence_count,
    });
    Ok(state)
}

pub fn memory_update(services: &Services, mut state: PipelineState) -> Result<PipelineState, HandlerError> {
    let report = state
        .bug_report
        .clone()
        .ok_or_else(|| backend(MEMORY_UPDATE, "no bug report in state"))?;
    let id = state
        .matched_record_id
        .ok_or_else(|| backend(MEMORY_UPDATE, "no matched record in state"))?;
    let previous = services
        .memory
        .get(&id)
        .ok_or_else(|| backend(MEMORY_UPDATE, format!("record {id} vanished")))?;
    let summary = summarize(
        services,
        "memory_update_summary",
        &[("previous_summary", &previous.summary), ("bug_report", &report.raw_text)],
        &report,
    );
    let record = services
        .memory
        .update_record(&id, &summary)
        .map_err(|e| backend(MEMORY_UPDATE, e))?;
    state.memory_mutations.push(MemoryMutation {
        kind: MutationKind::Update,
        record_id: record.id,
        error_type: record.error_type,
        occurrence_count: record.occurrence_count,
    });
    Ok(state)
}

/// Retrieved memories as they appear in the fix prompt.
pub fn render_memories(state: &PipelineState) -> String {
    if state.filtered_hits.is_empty() {
        return "(no related bugs on record)".to_string();
    }
    state
        .filtered_hits
        .iter()
        .map(|h| {
            format!(
                "- [{} | similarity {:.2} | seen {}x] {}",
                h.record.error_type, h.score, h.record.occurrence_count, h.record.summary
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn code_update(services: &Services, mut state: PipelineState) -> Result<PipelineState, HandlerError> {
    let report = state
        .bug_report
        .as_ref()
        .ok_or_else(|| backend(CODE_UPDATE, "no bug report in state"))?;
    let code = state.function_code.clone().unwrap_or_default();
    let memories = render_memories(&state);
    let response = services
        .gateway
        .complete_template(
            "code_fix",
            &[("code", &code), ("bug_report", &report.raw_text), ("memories", &memories)],
        )
        .map_err(|e| backend(CODE_UPDATE, e))?;
    let candidate = extract_code(&response).map_err(|e| backend(CODE_UPDATE, e))?;
    state.candidate_code = Some(candidate);
    Ok(state)
}

pub fn code_repair(mut state: PipelineState) -> Result<PipelineState, HandlerError> {
    let candidate = state
        .candidate_code
        .take()
        .ok_or_else(|| backend(CODE_REPAIR, "no candidate fix in state"))?;
    let defined = top_level_functions(&candidate);
    let keep_entry = state.entry_name.as_ref().is_some_and(|e| defined.contains(e));
    if !keep_entry {
        // A fix that renames the function moves the entry with it; one that
        // defines nothing keeps the old name and fails at execution.
        if let Some(first) = defined.into_iter().next() {
            state.entry_name = Some(first);
        }
    }
    state.function_code = Some(candidate);
    state.repair_count += 1;
    state.current_args = None;
    state.execution_result = None;
    state.bug_report = None;
    state.search_hits.clear();
    state.filtered_hits.clear();
    state.matched_record_id = None;
    Ok(state)
}
