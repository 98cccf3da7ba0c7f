//! Human-readable log of a run, one block per node.

use std::io::Write;

use repairgraph::graph::TraceStep;
use repairgraph::pipeline::{PipelineState, TaskOutcome, TaskStatus};

fn indented(code: &str) -> String {
    code.lines().map(|l| format!("    | {l}")).collect::<Vec<_>>().join("\n")
}

fn call(state: &PipelineState) -> String {
    let entry = state.entry_name.as_deref().unwrap_or("?");
    let args = state
        .current_args
        .as_ref()
        .map(|a| a.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", "))
        .unwrap_or_default();
    format!("{entry}({args})")
}

pub fn header(out: &mut impl Write, state_task_id: &str, prompt: &str) {
    let _ = writeln!(out, "task {state_task_id}");
    let _ = writeln!(out, "  prompt: {prompt}");
}

pub fn step(out: &mut impl Write, step: &TraceStep, state: &PipelineState) {
    let _ = writeln!(out, "[{}] {} ({:.1} ms)", step.step, step.node, step.ms);
    let line = match step.node.as_str() {
        "code_generation" => format!(
            "  generated {}:\n{}",
            state.entry_name.as_deref().unwrap_or("?"),
            indented(state.function_code.as_deref().unwrap_or(""))
        ),
        "code_execution" => match &state.execution_result {
            Some(r) if r.is_success() => {
                let value = r.return_value.as_ref().map(|v| v.to_string()).unwrap_or_default();
                format!("  {} returned {value}", call(state))
            }
            Some(r) => {
                let err = r.error.as_ref();
                format!(
                    "  {} failed: {} {}: {}",
                    call(state),
                    r.status,
                    err.map_or("", |e| e.error_type.as_str()),
                    err.map_or("", |e| e.message.as_str())
                )
            }
            None => "  no result".into(),
        },
        "bug_issue" => match &state.bug_report {
            Some(b) => format!("  bug report: {}: {} ({})", b.error_type, b.error_message, b.location),
            None => String::new(),
        },
        "memory_search" => match state.search_hits.first() {
            Some(best) => format!("  {} related bug(s), best similarity {:.3}", state.search_hits.len(), best.score),
            None => "  memory is empty".into(),
        },
        "memory_filter" => match state.matched_record_id {
            Some(id) => format!("  {} hit(s) pass the threshold; matched {id}", state.filtered_hits.len()),
            None => "  no hit passes the threshold".into(),
        },
        "memory_create" | "memory_update" => match state.memory_mutations.last() {
            Some(m) => format!(
                "  {} record {} ({}), seen {} time(s)",
                if step.node == "memory_create" { "created" } else { "updated" },
                m.record_id,
                m.error_type,
                m.occurrence_count
            ),
            None => String::new(),
        },
        "code_update" => format!(
            "  proposed fix:\n{}",
            indented(state.candidate_code.as_deref().unwrap_or(""))
        ),
        "code_repair" => format!("  repair {} applied", state.repair_count),
        _ => String::new(),
    };
    if !line.is_empty() {
        let _ = writeln!(out, "{line}");
    }
}

pub fn footer(out: &mut impl Write, outcome: &TaskOutcome) {
    let state = &outcome.final_state;
    let _ = writeln!(
        out,
        "status: {} after {} repair(s), {:.0} ms",
        state.status, outcome.repairs_used, outcome.wall_ms
    );
    if let Some(e) = &state.error {
        let _ = writeln!(out, "error: {e}");
    }
    if state.status != TaskStatus::BackendError {
        if let Some(code) = &state.function_code {
            let _ = writeln!(out, "final code:\n{}", indented(code));
        }
    }
}
