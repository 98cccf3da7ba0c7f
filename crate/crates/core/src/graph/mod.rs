//! Stateful directed-graph execution engine.
//!
//! A [`StateGraph`] registers named nodes that each take the whole state and
//! return a replacement state. Every non-terminal node has exactly one way
//! out: a plain edge or a router that picks among a declared candidate set.
//! [`StateGraph::compile`] validates the wiring and produces an immutable
//! [`CompiledGraph`] that can be run many times, from many threads.

mod trace;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

pub use trace::{state_digest, ExecutionTrace, TraceStep};

/// Reserved entry sentinel.
pub const START: &str = "__start__";
/// Reserved terminal sentinel.
pub const END: &str = "__end__";

/// Engine-level step budget used when callers do not pass their own.
pub const DEFAULT_MAX_STEPS: usize = 64;

/// Identifier of a node in a graph.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct NodeName(String);

impl NodeName {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn start() -> Self {
        Self(START.to_string())
    }

    pub fn end() -> Self {
        Self(END.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_start(&self) -> bool {
        self.0 == START
    }

    pub fn is_end(&self) -> bool {
        self.0 == END
    }

    fn is_reserved(&self) -> bool {
        self.is_start() || self.is_end()
    }
}

impl fmt::Debug for NodeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for NodeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeName {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

impl From<String> for NodeName {
    fn from(s: String) -> Self {
        Self(s)
    }
}

impl PartialEq<&str> for NodeName {
    fn eq(&self, other: &&str) -> bool {
        self.0 == *other
    }
}

/// Failure reported by a node handler. The run stops and the outcome
/// carries the message.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct HandlerError(pub String);

impl HandlerError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("node {0} is already declared")]
    DuplicateNode(NodeName),
    #[error("{0} is a reserved node name")]
    ReservedName(NodeName),
    #[error("node name must not be empty")]
    EmptyName,
    #[error("unknown node {0}")]
    UnknownNode(NodeName),
    #[error("node {0} already has an outgoing edge or router")]
    ConflictingRoute(NodeName),
    #[error("router on {0} declares no candidates")]
    EmptyCandidates(NodeName),
    #[error("edge from {from} targets undeclared node {to}")]
    DanglingTarget { from: NodeName, to: NodeName },
    #[error("node {0} has no outgoing edge or router")]
    MissingRoute(NodeName),
    #[error("END is not reachable from the entry node")]
    UnreachableEnd,
    #[error("graph has no entry edge from START")]
    MissingEntry,
    #[error("router on {from} returned {to}, which is not a declared candidate")]
    RouteViolation { from: NodeName, to: NodeName },
    #[error("max_steps must be at least 1")]
    ZeroBudget,
}

pub type Handler<S> = Arc<dyn Fn(S) -> Result<S, HandlerError> + Send + Sync>;
pub type Router<S> = Arc<dyn Fn(&S) -> NodeName + Send + Sync>;
pub type DigestFn<S> = Arc<dyn Fn(&S) -> String + Send + Sync>;

enum Route<S> {
    Edge(NodeName),
    Conditional {
        router: Router<S>,
        candidates: BTreeSet<NodeName>,
    },
}

impl<S> Clone for Route<S> {
    fn clone(&self) -> Self {
        match self {
            Route::Edge(n) => Route::Edge(n.clone()),
            Route::Conditional { router, candidates } => Route::Conditional {
                router: Arc::clone(router),
                candidates: candidates.clone(),
            },
        }
    }
}

impl<S> Route<S> {
    fn targets(&self) -> Vec<&NodeName> {
        match self {
            Route::Edge(n) => vec![n],
            Route::Conditional { candidates, .. } => candidates.iter().collect(),
        }
    }
}

/// Mutable graph definition. Build it up, then [`compile`](Self::compile).
pub struct StateGraph<S> {
    nodes: BTreeMap<NodeName, Handler<S>>,
    routes: BTreeMap<NodeName, Route<S>>,
}

impl<S> Default for StateGraph<S> {
    fn default() -> Self {
        Self {
            nodes: BTreeMap::new(),
            routes: BTreeMap::new(),
        }
    }
}

impl<S> StateGraph<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_names(&self) -> impl Iterator<Item = &NodeName> {
        self.nodes.keys()
    }

    pub fn add_node<F>(&mut self, name: impl Into<NodeName>, handler: F) -> Result<&mut Self, GraphError>
    where
        F: Fn(S) -> Result<S, HandlerError> + Send + Sync + 'static,
    {
        let name = name.into();
        if name.as_str().is_empty() {
            return Err(GraphError::EmptyName);
        }
        if name.is_reserved() {
            return Err(GraphError::ReservedName(name));
        }
        if self.nodes.contains_key(&name) {
            return Err(GraphError::DuplicateNode(name));
        }
        self.nodes.insert(name, Arc::new(handler));
        Ok(self)
    }

    fn check_source(&self, from: &NodeName) -> Result<(), GraphError> {
        if from.is_end() || !(from.is_start() || self.nodes.contains_key(from)) {
            return Err(GraphError::UnknownNode(from.clone()));
        }
        if self.routes.contains_key(from) {
            return Err(GraphError::ConflictingRoute(from.clone()));
        }
        Ok(())
    }

    /// Plain edge. Targets are validated at compile time so graphs can be
    /// wired in any order.
    pub fn add_edge(
        &mut self,
        from: impl Into<NodeName>,
        to: impl Into<NodeName>,
    ) -> Result<&mut Self, GraphError> {
        let from = from.into();
        self.check_source(&from)?;
        self.routes.insert(from, Route::Edge(to.into()));
        Ok(self)
    }

    pub fn add_conditional_edge<F, I, N>(
        &mut self,
        from: impl Into<NodeName>,
        router: F,
        candidates: I,
    ) -> Result<&mut Self, GraphError>
    where
        F: Fn(&S) -> NodeName + Send + Sync + 'static,
        I: IntoIterator<Item = N>,
        N: Into<NodeName>,
    {
        let from = from.into();
        self.check_source(&from)?;
        if from.is_start() {
            // START only takes a plain edge: the entry must be static.
            return Err(GraphError::ConflictingRoute(from));
        }
        let candidates: BTreeSet<NodeName> = candidates.into_iter().map(Into::into).collect();
        if candidates.is_empty() {
            return Err(GraphError::EmptyCandidates(from));
        }
        self.routes.insert(
            from,
            Route::Conditional {
                router: Arc::new(router),
                candidates,
            },
        );
        Ok(self)
    }

    /// Validate and freeze the graph.
    pub fn compile(&self) -> Result<CompiledGraph<S>, GraphError> {
        let entry = match self.routes.get(&NodeName::start()) {
            Some(Route::Edge(entry)) => entry.clone(),
            _ => return Err(GraphError::MissingEntry),
        };

        for (from, route) in &self.routes {
            for to in route.targets() {
                if to.is_start() || !(to.is_end() || self.nodes.contains_key(to)) {
                    return Err(GraphError::DanglingTarget {
                        from: from.clone(),
                        to: to.clone(),
                    });
                }
            }
        }
        if entry.is_end() {
            return Err(GraphError::MissingEntry);
        }
        for name in self.nodes.keys() {
            if !self.routes.contains_key(name) {
                return Err(GraphError::MissingRoute(name.clone()));
            }
        }

        // Static reachability of END, treating every router candidate as live.
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([entry.clone()]);
        let mut reaches_end = false;
        while let Some(node) = queue.pop_front() {
            if node.is_end() {
                reaches_end = true;
                break;
            }
            if !seen.insert(node.clone()) {
                continue;
            }
            if let Some(route) = self.routes.get(&node) {
                queue.extend(route.targets().into_iter().cloned());
            }
        }
        if !reaches_end {
            return Err(GraphError::UnreachableEnd);
        }

        let nodes = self
            .nodes
            .iter()
            .map(|(name, handler)| {
                let route = self.routes[name].clone();
                (name.clone(), (Arc::clone(handler), route))
            })
            .collect();
        Ok(CompiledGraph {
            entry,
            nodes,
            default_max_steps: DEFAULT_MAX_STEPS,
            digest: None,
        })
    }
}

/// How a run ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "detail")]
pub enum RunOutcome {
    Completed,
    BudgetExhausted,
    HandlerError { node: NodeName, message: String },
}

/// Result of [`CompiledGraph::run`]. On a handler error `state` is the last
/// state the failing node received.
#[derive(Debug, Clone)]
pub struct RunResult<S> {
    pub state: S,
    pub trace: ExecutionTrace,
    pub outcome: RunOutcome,
}

/// Validated, immutable graph.
pub struct CompiledGraph<S> {
    entry: NodeName,
    nodes: BTreeMap<NodeName, (Handler<S>, Route<S>)>,
    default_max_steps: usize,
    digest: Option<DigestFn<S>>,
}

impl<S> fmt::Debug for CompiledGraph<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CompiledGraph")
            .field("entry", &self.entry)
            .field("nodes", &self.nodes.keys().collect::<Vec<_>>())
            .field("default_max_steps", &self.default_max_steps)
            .finish()
    }
}

impl<S: Clone + Serialize> CompiledGraph<S> {
    pub fn entry(&self) -> &NodeName {
        &self.entry
    }

    pub fn node_names(&self) -> impl Iterator<Item = &NodeName> {
        self.nodes.keys()
    }

    pub fn default_max_steps(&self) -> usize {
        self.default_max_steps
    }

    pub fn with_default_max_steps(mut self, max_steps: usize) -> Self {
        self.default_max_steps = max_steps.max(1);
        self
    }

    /// Replace the trace digest (default: [`state_digest`]) with a
    /// state-specific canonical hash.
    pub fn with_digest<F>(mut self, digest: F) -> Self
    where
        F: Fn(&S) -> String + Send + Sync + 'static,
    {
        self.digest = Some(Arc::new(digest));
        self
    }

    pub fn digest_of(&self, state: &S) -> String {
        match &self.digest {
            Some(f) => f(state),
            None => state_digest(state),
        }
    }

    /// Apply a single node's handler. Used for replaying recorded traces.
    pub fn apply_node(&self, node: &NodeName, state: S) -> Result<S, HandlerError> {
        match self.nodes.get(node) {
            Some((handler, _)) => handler(state),
            None => Err(HandlerError::new(format!("unknown node {node}"))),
        }
    }

    /// Run with the graph's default step budget.
    pub fn invoke(&self, initial: S) -> Result<RunResult<S>, GraphError> {
        self.run(initial, self.default_max_steps)
    }

    pub fn run(&self, initial: S, max_steps: usize) -> Result<RunResult<S>, GraphError> {
        self.run_observed(initial, max_steps, |_, _| {})
    }

    /// Run to END, the step budget, or the first handler failure. `observer`
    /// sees every step after the node ran.
    pub fn run_observed<F>(
        &self,
        initial: S,
        max_steps: usize,
        mut observer: F,
    ) -> Result<RunResult<S>, GraphError>
    where
        F: FnMut(&TraceStep, &S),
    {
        if max_steps == 0 {
            return Err(GraphError::ZeroBudget);
        }
        let mut trace = ExecutionTrace::default();
        let mut state = initial;
        let mut current = self.entry.clone();

        loop {
            let (handler, route) = self
                .nodes
                .get(&current)
                .expect("compiled graph routes only to declared nodes");

            let started = Instant::now();
            // Keep the pre-step value so a failing handler leaves the state it received.
            let snapshot = match handler(state.clone()) {
                Ok(next) => next,
                Err(err) => {
                    return Ok(RunResult {
                        state,
                        trace,
                        outcome: RunOutcome::HandlerError {
                            node: current,
                            message: err.0,
                        },
                    })
                }
            };
            state = snapshot;
            let step = TraceStep {
                step: trace.len(),
                node: current.clone(),
                digest: self.digest_of(&state),
                ms: started.elapsed().as_secs_f64() * 1e3,
            };
            observer(&step, &state);
            trace.push(step);

            let next = match route {
                Route::Edge(to) => to.clone(),
                Route::Conditional { router, candidates } => {
                    let to = router(&state);
                    if !candidates.contains(&to) {
                        return Err(GraphError::RouteViolation { from: current, to });
                    }
                    to
                }
            };
            if next.is_end() {
                return Ok(RunResult {
                    state,
                    trace,
                    outcome: RunOutcome::Completed,
                });
            }
            if trace.len() >= max_steps {
                return Ok(RunResult {
                    state,
                    trace,
                    outcome: RunOutcome::BudgetExhausted,
                });
            }
            current = next;
        }
    }
}
