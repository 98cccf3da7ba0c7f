use std::collections::BTreeMap;
use std::path::Path;

use clap::Subcommand;
use uuid::Uuid;

use repairgraph::llm::{BackendMode, HttpBackend, ReplayBackend};
use repairgraph::memory::MemoryStore;
use repairgraph::pipeline::RunReport;
use repairgraph::sandbox::Sandbox;

use crate::config::{config_path, CliConfig, Overrides};
use crate::run::load_memory;
use crate::{exit, Exit};

#[derive(Debug, Subcommand)]
pub enum MemoryCommand {
    /// List every record
    List,
    /// Rank records by similarity to a query
    Search {
        #[arg(value_name = "QUERY")]
        query: String,
    },
    /// Print one record in full
    Show {
        #[arg(value_name = "ID")]
        id: String,
    },
}

fn one_line(text: &str, width: usize) -> String {
    let flat: String = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if flat.chars().count() <= width {
        flat
    } else {
        flat.chars().take(width - 3).collect::<String>() + "..."
    }
}

pub fn cmd_memory(cfg: &CliConfig, cmd: MemoryCommand) -> Result<u8, Exit> {
    let memory = load_memory(cfg)?;
    match cmd {
        MemoryCommand::List => {
            println!("{:<36}  {:<20} {:>5}  updated_at", "id", "error_type", "count");
            for r in memory.records() {
                println!(
                    "{:<36}  {:<20} {:>5}  {}",
                    r.id,
                    r.error_type,
                    r.occurrence_count,
                    r.updated_at.to_rfc3339()
                );
            }
            println!("{} record(s)", memory.len());
        }
        MemoryCommand::Search { query } => {
            let hits = memory.search(&query, cfg.k).map_err(|e| Exit::usage(e.to_string()))?;
            println!("{:>4}  {:>7}  {:<36}  {:<20} summary", "rank", "score", "id", "error_type");
            for (i, h) in hits.iter().enumerate() {
                println!(
                    "{:>4}  {:>7.4}  {:<36}  {:<20} {}",
                    i + 1,
                    h.score,
                    h.record.id,
                    h.record.error_type,
                    one_line(&h.record.summary, 60)
                );
            }
        }
        MemoryCommand::Show { id } => {
            let record = Uuid::parse_str(id.trim())
                .ok()
                .and_then(|id| memory.get(&id))
                .ok_or_else(|| Exit::data(format!("no memory record with id {id}")))?;
            let json = serde_json::to_string_pretty(&record).expect("record serializes");
            println!("{json}");
        }
    }
    Ok(exit::SUCCESS)
}

pub fn cmd_trace(path: &Path) -> Result<u8, Exit> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Exit::failure(format!("report {}: {e}", path.display())))?;
    let report: RunReport =
        serde_json::from_str(&text).map_err(|e| Exit::data(format!("report {}: {e}", path.display())))?;

    println!(
        "task {}: {} after {} repair(s)",
        report.task_id, report.status, report.repairs_used
    );
    println!("{:>4}  {:<16} {:>10}", "step", "node", "ms");
    let mut per_node: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    let mut total = 0.0;
    for s in report.trace.steps() {
        println!("{:>4}  {:<16} {:>10.2}", s.step, s.node, s.ms);
        let e = per_node.entry(s.node.as_str()).or_default();
        e.0 += 1;
        e.1 += s.ms;
        total += s.ms;
    }
    println!("{} step(s), {:.2} ms in nodes, {:.2} ms wall", report.trace.len(), total, report.wall_ms);
    println!("{:<16} {:>6} {:>10}", "node", "visits", "ms");
    for (node, (visits, ms)) in per_node {
        println!("{node:<16} {visits:>6} {ms:>10.2}");
    }
    Ok(exit::SUCCESS)
}

struct Findings {
    ok: bool,
}

impl Findings {
    fn pass(&mut self, what: &str, detail: impl std::fmt::Display) {
        println!("ok    {what}: {detail}");
    }

    fn fail(&mut self, what: &str, detail: impl std::fmt::Display) {
        self.ok = false;
        println!("FAIL  {what}: {detail}");
    }
}

pub fn cmd_config_check(overrides: &Overrides, env: &dyn Fn(&str) -> Option<String>) -> u8 {
    let mut f = Findings { ok: true };
    match config_path(overrides.config.as_deref(), env) {
        Some((path, _)) => f.pass("config file", path.display()),
        None => f.pass("config file", "none found, using defaults"),
    }
    let cfg = match CliConfig::resolve(overrides, env) {
        Ok(cfg) => {
            f.pass(
                "settings",
                format!(
                    "k={} tau={} timeout={}s max_repairs={}",
                    cfg.k, cfg.tau, cfg.default_timeout_s, cfg.default_max_repairs
                ),
            );
            cfg
        }
        Err(e) => {
            f.fail("settings", e);
            return exit::FAILURE;
        }
    };

    match Sandbox::new(&cfg.interpreter_path).probe() {
        Ok(version) => f.pass("interpreter", format!("{} ({version})", cfg.interpreter_path.display())),
        Err(e) => f.fail("interpreter", e),
    }

    match MemoryStore::load_or_empty(&cfg.memory_path) {
        Ok(m) if cfg.memory_path.exists() => f.pass("memory", format!("{} record(s) in {}", m.len(), cfg.memory_path.display())),
        Ok(_) => f.pass("memory", format!("{} will be created on first run", cfg.memory_path.display())),
        Err(e) => f.fail("memory", format!("{}: {e}", cfg.memory_path.display())),
    }

    let backend = &cfg.backend;
    match backend.mode {
        BackendMode::Mock => f.pass("backend", "mock mode; runs need --mock or --cassette"),
        BackendMode::Replay => match &backend.cassette {
            Some(path) => match ReplayBackend::load(path) {
                Ok(_) => f.pass("backend", format!("replaying {}", path.display())),
                Err(e) => f.fail("backend", e),
            },
            None => f.fail("backend", "replay mode without backend.cassette"),
        },
        BackendMode::Live | BackendMode::Record => {
            if backend.mode == BackendMode::Record && backend.cassette.is_none() {
                f.fail("backend", "record mode without backend.cassette");
            }
            match backend.api_key() {
                Ok(_) => f.pass("api key", format!("${} is set", backend.api_key_env)),
                Err(e) => f.fail("api key", e),
            }
            match HttpBackend::new(backend.clone()).and_then(|b| b.probe()) {
                Ok(status) => f.pass("backend", format!("{} answered HTTP {status}", backend.base_url)),
                Err(e) => f.fail("backend", format!("{}: {e}", backend.base_url)),
            }
        }
    }

    if f.ok {
        exit::SUCCESS
    } else {
        exit::FAILURE
    }
}
