use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Args;
use serde_json::Value;

use repairgraph::llm::{
    BackendMode, ChatBackend, Gateway, HttpBackend, MockPlaybook, RecordingBackend, ReplayBackend,
};
use repairgraph::memory::MemoryStore;
use repairgraph::par;
use repairgraph::pipeline::{build_pipeline, RunReport, Services, TaskOutcome, TaskSpec, TaskStatus};
use repairgraph::sandbox::Sandbox;

use crate::config::CliConfig;
use crate::{exit, narrate, Exit, Global};

#[derive(Debug, Args)]
pub struct RunArgs {
    /// What the function should do
    #[arg(value_name = "PROMPT", required_unless_present = "task", conflicts_with = "task")]
    pub prompt: Option<String>,
    /// Argument lists to call the function with, as JSON: [[10, 2], [10, 0]]
    #[arg(long, value_name = "JSON", required_unless_present = "task", conflicts_with = "task")]
    pub args: Option<String>,
    /// Return value the last argument list must produce, as JSON
    #[arg(long, value_name = "JSON", conflicts_with = "task")]
    pub expected: Option<String>,
    /// Task id used for the report file name
    #[arg(long, default_value = "task", conflicts_with = "task")]
    pub id: String,
    /// Task file instead of PROMPT and --args
    #[arg(long, value_name = "FILE")]
    pub task: Option<PathBuf>,
    /// Print only the final status line
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    /// Directory of task files (*.json)
    #[arg(value_name = "DIR")]
    pub corpus: PathBuf,
    /// Tasks run at once
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: u16,
}

pub fn status_code(status: TaskStatus) -> u8 {
    match status {
        TaskStatus::Success => exit::SUCCESS,
        TaskStatus::FailedMaxRepairs | TaskStatus::InProgress => exit::FAILED_MAX_REPAIRS,
        TaskStatus::BackendError => exit::BACKEND_ERROR,
    }
}

/// The gateway a task talks to, chosen from --mock, --cassette and the
/// configured backend mode.
pub fn gateway_for(global: &Global, cfg: &CliConfig, task_id: &str) -> Result<Gateway, Exit> {
    if let Some(path) = &global.mock {
        let file = if path.is_dir() {
            path.join(format!("{task_id}.json"))
        } else {
            path.clone()
        };
        let book = MockPlaybook::load(&file)
            .map_err(|e| Exit::usage(format!("mock playbook {}: {e}", file.display())))?;
        return Ok(Gateway::mock(book));
    }
    let mut backend = cfg.backend.clone();
    if let Some(cassette) = &global.cassette {
        backend.cassette = Some(cassette.clone());
        if backend.mode != BackendMode::Record {
            backend.mode = BackendMode::Replay;
        }
    }
    let model = backend.model_id.clone();
    let inner: Arc<dyn ChatBackend> = match backend.mode {
        BackendMode::Mock => {
            return Err(Exit::usage(
                "no backend selected: pass --mock or --cassette, or set backend.mode to live",
            ))
        }
        BackendMode::Live => Arc::new(HttpBackend::new(backend).map_err(|e| Exit::failure(e.to_string()))?),
        BackendMode::Record => {
            let path = backend
                .cassette
                .clone()
                .ok_or_else(|| Exit::usage("record mode needs --cassette or backend.cassette"))?;
            let http = HttpBackend::new(backend).map_err(|e| Exit::failure(e.to_string()))?;
            Arc::new(RecordingBackend::new(http, path).map_err(|e| Exit::failure(e.to_string()))?)
        }
        BackendMode::Replay => {
            let path = backend
                .cassette
                .ok_or_else(|| Exit::usage("replay mode needs --cassette or backend.cassette"))?;
            Arc::new(ReplayBackend::load(&path).map_err(|e| Exit::usage(e.to_string()))?)
        }
    };
    Ok(Gateway::new(model, inner))
}

pub fn load_memory(cfg: &CliConfig) -> Result<Arc<MemoryStore>, Exit> {
    MemoryStore::load_or_empty(&cfg.memory_path)
        .map(Arc::new)
        .map_err(|e| Exit::failure(format!("memory {}: {e}", cfg.memory_path.display())))
}

fn save_memory(cfg: &CliConfig, memory: &MemoryStore) -> Result<(), Exit> {
    memory
        .persist(&cfg.memory_path)
        .map_err(|e| Exit::failure(format!("saving memory {}: {e}", cfg.memory_path.display())))
}

fn sandbox(cfg: &CliConfig) -> Sandbox {
    Sandbox::new(&cfg.interpreter_path).with_default_timeout(cfg.default_timeout_s)
}

fn write_report(cfg: &CliConfig, report: &RunReport) -> Result<PathBuf, Exit> {
    std::fs::create_dir_all(&cfg.report_dir)
        .map_err(|e| Exit::failure(format!("creating {}: {e}", cfg.report_dir.display())))?;
    let path = cfg.report_dir.join(format!("{}.json", report.task_id));
    std::fs::write(&path, report.to_json_pretty() + "\n")
        .map_err(|e| Exit::failure(format!("writing {}: {e}", path.display())))?;
    Ok(path)
}

fn parse_json(flag: &str, text: &str) -> Result<Value, Exit> {
    serde_json::from_str(text).map_err(|e| Exit::usage(format!("{flag} is not valid JSON: {e}")))
}

fn parse_arg_sets(text: &str) -> Result<Vec<Vec<Value>>, Exit> {
    let value = parse_json("--args", text)?;
    let shape = || Exit::usage("--args must be a non-empty JSON list of argument lists, e.g. [[10, 2]]");
    let sets = value.as_array().filter(|a| !a.is_empty()).ok_or_else(shape)?;
    sets.iter()
        .map(|s| s.as_array().cloned().ok_or_else(shape))
        .collect()
}

/// Parse a task file, filling max_repairs from the config when the file
/// leaves it out and from the flag when one is given.
pub fn parse_task(text: &str, source: &Path, cfg: &CliConfig, flag: Option<u32>) -> Result<TaskSpec, Exit> {
    let mut value: Value =
        serde_json::from_str(text).map_err(|e| Exit::data(format!("task {}: {e}", source.display())))?;
    if let Some(obj) = value.as_object_mut() {
        if let Some(m) = flag {
            obj.insert("max_repairs".into(), m.into());
        } else {
            obj.entry("max_repairs").or_insert(cfg.default_max_repairs.into());
        }
    }
    let task: TaskSpec =
        serde_json::from_value(value).map_err(|e| Exit::data(format!("task {}: {e}", source.display())))?;
    task.validate().map_err(|e| Exit::data(e.to_string()))?;
    Ok(task)
}

fn run_one(
    cfg: &CliConfig,
    gateway: Gateway,
    memory: &Arc<MemoryStore>,
    task: &TaskSpec,
    mut observer: impl FnMut(&repairgraph::graph::TraceStep, &repairgraph::pipeline::PipelineState),
) -> Result<(TaskOutcome, RunReport), Exit> {
    let model = gateway.model_id().to_string();
    let services = Services {
        gateway,
        sandbox: sandbox(cfg),
        memory: Arc::clone(memory),
    };
    let pipeline = build_pipeline(services, cfg.pipeline()).map_err(|e| Exit::usage(e.to_string()))?;
    let outcome = pipeline
        .run_task_observed(task, &mut observer)
        .map_err(|e| Exit::data(e.to_string()))?;
    let report = RunReport::new(&outcome, pipeline.config(), &model);
    Ok((outcome, report))
}

pub fn cmd_run(global: &Global, cfg: &CliConfig, args: RunArgs) -> Result<u8, Exit> {
    let task = match &args.task {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Exit::usage(format!("task {}: {e}", path.display())))?;
            parse_task(&text, path, cfg, global.max_repairs)?
        }
        None => {
            let prompt = args.prompt.clone().unwrap_or_default();
            let arg_sets = parse_arg_sets(args.args.as_deref().unwrap_or_default())?;
            let mut task = TaskSpec::new(args.id.clone(), prompt, arg_sets).with_max_repairs(cfg.default_max_repairs);
            if let Some(e) = &args.expected {
                task = task.with_expected_return(parse_json("--expected", e)?);
            }
            task.validate().map_err(|e| Exit::usage(e.to_string()))?;
            task
        }
    };

    let gateway = gateway_for(global, cfg, &task.id)?;
    let memory = load_memory(cfg)?;
    let mut out = std::io::stdout().lock();
    if !args.quiet {
        narrate::header(&mut out, &task.id, &task.prompt);
    }
    let quiet = args.quiet;
    let (outcome, report) = run_one(cfg, gateway, &memory, &task, |step, state| {
        if !quiet {
            narrate::step(&mut std::io::stdout().lock(), step, state);
        }
    })?;
    if !quiet {
        narrate::footer(&mut out, &outcome);
    } else {
        use std::io::Write;
        let _ = writeln!(out, "{} {} {}", task.id, outcome.status(), outcome.repairs_used);
    }
    save_memory(cfg, &memory)?;
    let path = write_report(cfg, &report)?;
    if !quiet {
        use std::io::Write;
        let _ = writeln!(out, "report: {}", path.display());
    }
    Ok(status_code(outcome.status()))
}

fn load_corpus(dir: &Path, cfg: &CliConfig, flag: Option<u32>) -> Result<Vec<TaskSpec>, Exit> {
    let entries = std::fs::read_dir(dir).map_err(|e| Exit::usage(format!("corpus {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Exit::usage(format!("corpus {} has no *.json task files", dir.display())));
    }
    let mut tasks = Vec::with_capacity(files.len());
    let mut ids = BTreeSet::new();
    for file in &files {
        let text = std::fs::read_to_string(file).map_err(|e| Exit::failure(format!("{}: {e}", file.display())))?;
        let task = parse_task(&text, file, cfg, flag)?;
        if !ids.insert(task.id.clone()) {
            return Err(Exit::data(format!("task id {} appears twice in {}", task.id, dir.display())));
        }
        tasks.push(task);
    }
    tasks.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(tasks)
}

pub fn cmd_batch(global: &Global, cfg: &CliConfig, args: BatchArgs) -> Result<u8, Exit> {
    let tasks = load_corpus(&args.corpus, cfg, global.max_repairs)?;
    // Resolve every backend first so a missing playbook stops the batch before any work.
    let gateways: Vec<Gateway> = tasks
        .iter()
        .map(|t| gateway_for(global, cfg, &t.id))
        .collect::<Result<_, _>>()?;
    let memory = load_memory(cfg)?;

    let jobs: Vec<(&TaskSpec, Gateway)> = tasks.iter().zip(gateways).collect();
    let results = par::map_with_threads(args.jobs as usize, &jobs, |(task, gateway)| {
        run_one(cfg, gateway.clone(), &memory, task, |_, _| {})
    });

    println!("{:<28} {:<18} {:>7} {:>10}", "task", "status", "repairs", "wall ms");
    let mut worst = exit::SUCCESS;
    let mut counts = [0usize; 3];
    for result in results {
        let (outcome, report) = result?;
        write_report(cfg, &report)?;
        println!(
            "{:<28} {:<18} {:>7} {:>10.1}",
            report.task_id, report.status.to_string(), report.repairs_used, report.wall_ms
        );
        let code = status_code(outcome.status());
        counts[match code {
            exit::SUCCESS => 0,
            exit::FAILED_MAX_REPAIRS => 1,
            _ => 2,
        }] += 1;
        worst = worst.max(code);
    }
    println!(
        "{} task(s): {} success, {} failed_max_repairs, {} backend_error",
        tasks.len(),
        counts[0],
        counts[1],
        counts[2]
    );
    save_memory(cfg, &memory)?;
    println!("reports: {}", cfg.report_dir.display());
    Ok(worst)
}
