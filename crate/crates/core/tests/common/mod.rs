#![allow(dead_code)]

use std::sync::{Arc, Mutex};

use serde::Deserialize;
use serde_json::Value;

use repairgraph::llm::{ChatBackend, CompletionRequest, Gateway, LlmError, MockBackend, MockPlaybook, DEFAULT_MODEL};
use repairgraph::memory::MemoryStore;
use repairgraph::pipeline::{build_pipeline, Pipeline, PipelineConfig, Services, TaskSpec};
use repairgraph::sandbox::{ExecutionRequest, Sandbox};

pub const TRIANGLE_AREA: &str = "def triangle_area(base, height):\n    return (base * height) / 2\n";

pub const DIVIDE_NAIVE: &str = "def divide_two_numbers(a, b):\n    return a / b\n";

pub const DIVIDE_FIXED: &str =
    "def divide_two_numbers(a, b):\n    if b == 0:\n        return \"Error: Division by zero\"\n    return a / b\n";

#[derive(Debug, Clone, Deserialize)]
pub struct FailureCase {
    pub name: String,
    pub source: String,
    pub entry: String,
    pub args: Vec<Value>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    pub status: String,
    pub error_type: String,
}

fn default_timeout() -> f64 {
    10.0
}

impl FailureCase {
    pub fn request(&self) -> ExecutionRequest {
        ExecutionRequest::new(self.source.clone(), self.entry.clone(), self.args.clone()).with_timeout(self.timeout_s)
    }
}

pub fn failure_corpus() -> Vec<FailureCase> {
    let text = include_str!("../fixtures/failure_corpus.json");
    serde_json::from_str(text).expect("failure corpus parses")
}

pub fn fenced(code: &str) -> String {
    format!("Here is the function:\n```python\n{code}```\n")
}

pub const TRIANGLE_TASK: &str = include_str!("../../../../corpus/tasks/triangle_area.json");
pub const TRIANGLE_PLAYBOOK: &str = include_str!("../../../../corpus/playbooks/triangle_area.json");
pub const DIVIDE_TASK: &str = include_str!("../../../../corpus/tasks/divide_two_numbers.json");
pub const DIVIDE_PLAYBOOK: &str = include_str!("../../../../corpus/playbooks/divide_two_numbers.json");

pub fn task(json: &str) -> TaskSpec {
    serde_json::from_str(json).expect("task parses")
}

pub fn playbook(json: &str) -> MockPlaybook {
    MockPlaybook::from_json(json).expect("playbook parses")
}

/// Mock backend that also remembers every request it answered.
#[derive(Debug)]
pub struct Capturing {
    mock: MockBackend,
    pub prompts: Mutex<Vec<(String, String)>>,
}

impl Capturing {
    pub fn new(playbook: MockPlaybook) -> Arc<Self> {
        Arc::new(Self {
            mock: MockBackend::new(playbook),
            prompts: Mutex::new(Vec::new()),
        })
    }

    pub fn remaining(&self) -> usize {
        self.mock.remaining()
    }

    pub fn prompts_for(&self, template: &str) -> Vec<String> {
        self.prompts
            .lock()
            .unwrap()
            .iter()
            .filter(|(t, _)| t == template)
            .map(|(_, p)| p.clone())
            .collect()
    }
}

impl ChatBackend for Capturing {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        self.prompts
            .lock()
            .unwrap()
            .push((request.template.clone(), request.rendered_prompt()));
        self.mock.complete(request)
    }
}

pub fn services_with(backend: Arc<dyn ChatBackend>, memory: Arc<MemoryStore>) -> Services {
    Services {
        gateway: Gateway::new(DEFAULT_MODEL, backend),
        sandbox: Sandbox::default(),
        memory,
    }
}

pub fn pipeline_with(backend: Arc<dyn ChatBackend>, memory: Arc<MemoryStore>) -> Pipeline {
    build_pipeline(services_with(backend, memory), PipelineConfig::default()).expect("pipeline builds")
}

const SCENARIO_ERRORS: [&str; 3] = ["ValueError", "KeyError", "ZeroDivisionError"];

/// Code for round `i` of a scenario: raises while `i` is still a failing
/// round, otherwise returns `x + 1`.
pub fn scenario_code(i: u32, failures: Option<u32>) -> String {
    let failing = failures.is_none_or(|r| i < r);
    if failing {
        let err = SCENARIO_ERRORS[i as usize % SCENARIO_ERRORS.len()];
        format!("def scenario_fn(x):\n    raise {err}(\"round {i} rejects \" + str(x))\n")
    } else {
        "def scenario_fn(x):\n    return x + 1\n".to_string()
    }
}

/// Synthetic task whose first `failures` versions raise (`None`: every
/// version raises). Returns the task and exactly the replies it needs.
pub fn scenario(id: &str, failures: Option<u32>, max_repairs: u32) -> (TaskSpec, MockPlaybook) {
    let task = TaskSpec::new(id, format!("Scenario task {id}: add one to x"), vec![vec![serde_json::json!(1)]])
        .with_expected_return(serde_json::json!(2))
        .with_max_repairs(max_repairs);
    let rounds = failures.map_or(max_repairs, |r| r.min(max_repairs));
    let mut book = MockPlaybook::new().push(format!("Scenario task {id}"), fenced(&scenario_code(0, failures)));
    for i in 0..rounds {
        let err = SCENARIO_ERRORS[i as usize % SCENARIO_ERRORS.len()];
        book = book
            .push("Write a bug report", "{}")
            .push("knowledge base summary", format!("{err} raised by scenario_fn when rejecting its input"))
            .push("Fix the Python function", fenced(&scenario_code(i + 1, failures)));
    }
    (task, book)
}
