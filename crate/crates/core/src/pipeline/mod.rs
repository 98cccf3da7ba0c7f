//! The generate / execute / report / remember / fix loop, assembled on the
//! graph engine.
//!
//! ```text
//! START -> code_generation -> code_execution --success or cap--> END
//!                                  |  ^
//!                          failure |  +-------------- code_repair
//!                                  v                      ^
//!     bug_issue -> memory_search -> memory_filter     code_update
//!                                   |          |          ^
//!                       no match -> memory_create ---------+
//!                          match -> memory_update ---------+
//! ```

pub mod nodes;
mod report;
mod state;

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{CompiledGraph, ExecutionTrace, GraphError, NodeName, RunOutcome, StateGraph, TraceStep, END, START};
use crate::llm::Gateway;
use crate::memory::{MemoryStore, DEFAULT_K, DEFAULT_TAU};
use crate::sandbox::{Sandbox, DEFAULT_TIMEOUT_S};

pub use nodes::{
    BUG_ISSUE, CODE_EXECUTION, CODE_GENERATION, CODE_REPAIR, CODE_UPDATE, MEMORY_CREATE, MEMORY_FILTER,
    MEMORY_SEARCH, MEMORY_UPDATE,
};
pub use report::{ReportConfig, RunReport, MEMORY_BRANCH_RULE};
pub use state::{
    BugReport, MemoryMutation, MutationKind, PipelineState, TaskSpec, TaskStatus, DEFAULT_MAX_REPAIRS,
};

/// The nodes a run can visit, in flowchart order.
pub const NODE_NAMES: [&str; 9] = [
    CODE_GENERATION,
    CODE_EXECUTION,
    BUG_ISSUE,
    MEMORY_SEARCH,
    MEMORY_FILTER,
    MEMORY_CREATE,
    MEMORY_UPDATE,
    CODE_UPDATE,
    CODE_REPAIR,
];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid task {0}")]
    InvalidTask(String),
    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Services the node handlers call out to.
#[derive(Debug, Clone)]
pub struct Services {
    pub gateway: Gateway,
    pub sandbox: Sandbox,
    pub memory: Arc<MemoryStore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Hits requested from memory search.
    pub k: usize,
    /// Minimum similarity for a hit to count as the same bug.
    pub tau: f64,
    /// Per-call sandbox timeout in seconds.
    pub timeout_s: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            tau: DEFAULT_TAU,
            timeout_s: DEFAULT_TIMEOUT_S,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.k == 0 {
            return Err(PipelineError::InvalidConfig("k must be at least 1".into()));
        }
        if !self.tau.is_finite() {
            return Err(PipelineError::InvalidConfig("tau must be finite".into()));
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(PipelineError::InvalidConfig("timeout_s must be positive".into()));
        }
        Ok(())
    }
}

/// Result of one task.
#[derive(Debug, Clone)]
pub struct TaskOutcome {
    pub final_state: PipelineState,
    pub trace: ExecutionTrace,
    pub wall_ms: f64,
    pub repairs_used: u32,
    pub engine_outcome: RunOutcome,
}

impl TaskOutcome {
    pub fn status(&self) -> TaskStatus {
        self.final_state.status
    }

    pub fn task_id(&self) -> &str {
        &self.final_state.task.id
    }
}

/// A compiled repair graph bound to its services.
pub struct Pipeline {
    graph: CompiledGraph<PipelineState>,
    services: Arc<Services>,
    config: PipelineConfig,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("graph", &self.graph)
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

/// Wire the nine working nodes and compile.
pub fn build_pipeline(services: Services, config: PipelineConfig) -> Result<Pipeline, PipelineError> {
    config.validate()?;
    let services = Arc::new(services);
    let mut g: StateGraph<PipelineState> = StateGraph::new();

    let s = Arc::clone(&services);
    g.add_node(CODE_GENERATION, move |st| nodes::code_generation(&s, st))?;
    let s = Arc::clone(&services);
    g.add_node(CODE_EXECUTION, move |st| nodes::code_execution(&s, &config, st))?;
    let s = Arc::clone(&services);
    g.add_node(BUG_ISSUE, move |st| nodes::bug_issue(&s, st))?;
    let s = Arc::clone(&services);
    g.add_node(MEMORY_SEARCH, move |st| nodes::memory_search(&s, &config, st))?;
    g.add_node(MEMORY_FILTER, move |st| nodes::memory_filter(&config, st))?;
    let s = Arc::clone(&services);
    g.add_node(MEMORY_CREATE, move |st| nodes::memory_create(&s, st))?;
    let s = Arc::clone(&services);
    g.add_node(MEMORY_UPDATE, move |st| nodes::memory_update(&s, st))?;
    let s = Arc::clone(&services);
    g.add_node(CODE_UPDATE, move |st| nodes::code_update(&s, st))?;
    g.add_node(CODE_REPAIR, nodes::code_repair)?;

    g.add_edge(START, CODE_GENERATION)?;
    g.add_edge(CODE_GENERATION, CODE_EXECUTION)?;
    g.add_conditional_edge(CODE_EXECUTION, nodes::route_after_execution, [END, BUG_ISSUE])?;
    g.add_edge(BUG_ISSUE, MEMORY_SEARCH)?;
    g.add_edge(MEMORY_SEARCH, MEMORY_FILTER)?;
    g.add_conditional_edge(MEMORY_FILTER, nodes::route_after_filter, [MEMORY_CREATE, MEMORY_UPDATE])?;
    g.add_edge(MEMORY_CREATE, CODE_UPDATE)?;
    g.add_edge(MEMORY_UPDATE, CODE_UPDATE)?;
    g.add_edge(CODE_UPDATE, CODE_REPAIR)?;
    g.add_edge(CODE_REPAIR, CODE_EXECUTION)?;

    let graph = g.compile()?.with_digest(PipelineState::canonical_digest);
    Ok(Pipeline {
        graph,
        services,
        config,
    })
}

impl Pipeline {
    pub fn graph(&self) -> &CompiledGraph<PipelineState> {
        &self.graph
    }

    pub fn services(&self) -> &Services {
        &self.services
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn run_task(&self, task: &TaskSpec) -> Result<TaskOutcome, PipelineError> {
        self.run_task_observed(task, |_, _| {})
    }

    /// Run one task; `observer` sees the state after every node.
    pub fn run_task_observed<F>(&self, task: &TaskSpec, observer: F) -> Result<TaskOutcome, PipelineError>
    where
        F: FnMut(&TraceStep, &PipelineState),
    {
        task.validate()?;
        let started = Instant::now();
        let initial = PipelineState::new(task.clone());
        let run = self.graph.run_observed(initial, task.step_budget(), observer);
        let (mut state, trace, outcome) = match run {
            Ok(r) => (r.state, r.trace, r.outcome),
            Err(e) => {
                // A router left its declared candidates. Nothing to salvage.
                let mut state = PipelineState::new(task.clone());
                state.status = TaskStatus::BackendError;
                state.error = Some(e.to_string());
                let outcome = RunOutcome::HandlerError {
                    node: NodeName::new("router"),
                    message: e.to_string(),
                };
                (state, ExecutionTrace::default(), outcome)
            }
        };
        match &outcome {
            RunOutcome::Completed => {}
            RunOutcome::HandlerError { message, .. } => {
                state.status = TaskStatus::BackendError;
                state.error = Some(message.clone());
            }
            RunOutcome::BudgetExhausted => {
                state.status = TaskStatus::FailedMaxRepairs;
                state.error = Some("engine step budget exhausted".into());
            }
        }
        Ok(TaskOutcome {
            repairs_used: state.repair_count,
            final_state: state,
            trace,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            engine_outcome: outcome,
        })
    }
}
