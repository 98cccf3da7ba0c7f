//! Out-of-process execution of candidate code.
//!
//! Each [`Sandbox::execute`] call writes the candidate source and a fixed
//! harness script into a fresh scratch directory, starts the interpreter,
//! and waits at most `timeout_s`. The harness reports the outcome as a JSON
//! envelope framed by a per-run random nonce, so nothing the candidate
//! prints can be mistaken for the result.

mod traceback;

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use traceback::parse_traceback;

const HARNESS: &str = include_str!("harness.py");
pub const DEFAULT_TIMEOUT_S: f64 = 10.0;
/// Extra time allowed for killing and reaping a timed-out child.
pub const KILL_GRACE: Duration = Duration::from_secs(1);
const POLL: Duration = Duration::from_millis(5);

#[derive(Debug, Error)]
pub enum SandboxError {
    #[error("invalid execution request: {0}")]
    InvalidRequest(String),
    #[error("failed to start interpreter {path}: {source}")]
    Spawn {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("scratch directory: {0}")]
    Scratch(#[from] std::io::Error),
    /// The child exited cleanly but produced no readable envelope.
    #[error("harness produced no usable envelope: {0}")]
    HarnessFailure(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRequest {
    pub source: String,
    pub entry: String,
    pub args: Vec<Value>,
    pub timeout_s: f64,
}

impl ExecutionRequest {
    pub fn new(source: impl Into<String>, entry: impl Into<String>, args: Vec<Value>) -> Self {
        Self {
            source: source.into(),
            entry: entry.into(),
            args,
            timeout_s: DEFAULT_TIMEOUT_S,
        }
    }

    pub fn with_timeout(mut self, timeout_s: f64) -> Self {
        self.timeout_s = timeout_s;
        self
    }

    fn validate(&self) -> Result<(), SandboxError> {
        if self.entry.trim().is_empty() {
            return Err(SandboxError::InvalidRequest("entry must not be empty".into()));
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(SandboxError::InvalidRequest("timeout_s must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionStatus {
    Success,
    Exception,
    SyntaxError,
    Timeout,
    Crash,
}

impl ExecutionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Success => "success",
            Self::Exception => "exception",
            Self::SyntaxError => "syntax_error",
            Self::Timeout => "timeout",
            Self::Crash => "crash",
        }
    }
}

impl std::fmt::Display for ExecutionStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredError {
    pub error_type: String,
    pub message: String,
    pub line: Option<u32>,
    pub function: Option<String>,
    pub traceback_text: String,
}

impl StructuredError {
    pub fn simple(error_type: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            error_type: error_type.into(),
            message: message.into(),
            line: None,
            function: None,
            traceback_text: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub status: ExecutionStatus,
    pub stdout: String,
    pub stderr: String,
    /// `Some(Value::Null)` is a function that returned `None`; `None` means
    /// there is no return value at all.
    #[serde(default, deserialize_with = "present_value", skip_serializing_if = "Option::is_none")]
    pub return_value: Option<Value>,
    pub error: Option<StructuredError>,
    pub wall_ms: f64,
}

fn present_value<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Value>, D::Error> {
    Value::deserialize(d).map(Some)
}

impl ExecutionResult {
    pub fn is_success(&self) -> bool {
        self.status == ExecutionStatus::Success
    }

    pub fn error_type(&self) -> Option<&str> {
        self.error.as_ref().map(|e| e.error_type.as_str())
    }

    fn failure(status: ExecutionStatus, error: StructuredError, stdout: String, stderr: String, wall_ms: f64) -> Self {
        Self {
            status,
            stdout,
            stderr,
            return_value: None,
            error: Some(error),
            wall_ms,
        }
    }
}

#[derive(Deserialize)]
struct Envelope {
    status: String,
    #[serde(default, deserialize_with = "present_value")]
    return_value: Option<Value>,
    error: Option<EnvelopeError>,
}

#[derive(Deserialize)]
struct EnvelopeError {
    error_type: String,
    #[serde(default)]
    message: String,
    #[serde(default)]
    traceback_text: String,
}

/// Runs candidate code with a configured interpreter.
#[derive(Debug, Clone)]
pub struct Sandbox {
    interpreter: PathBuf,
    default_timeout_s: f64,
}

impl Default for Sandbox {
    fn default() -> Self {
        Self::new(resolve_interpreter(None))
    }
}

/// Interpreter to use: an explicit path, else `REPAIRGRAPH_PYTHON`, else
/// `python3` from `PATH`.
pub fn resolve_interpreter(explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Ok(p) = std::env::var("REPAIRGRAPH_PYTHON") {
        if !p.trim().is_empty() {
            return PathBuf::from(p);
        }
    }
    PathBuf::from("python3")
}

impl Sandbox {
    pub fn new(interpreter: impl Into<PathBuf>) -> Self {
        Self {
            interpreter: interpreter.into(),
            default_timeout_s: DEFAULT_TIMEOUT_S,
        }
    }

    pub fn with_default_timeout(mut self, timeout_s: f64) -> Self {
        self.default_timeout_s = timeout_s;
        self
    }

    pub fn interpreter(&self) -> &Path {
        &self.interpreter
    }

    pub fn default_timeout_s(&self) -> f64 {
        self.default_timeout_s
    }

    /// `interpreter --version`, or an error if it cannot be started.
    pub fn probe(&self) -> Result<String, SandboxError> {
        let out = Command::new(&self.interpreter)
            .arg("--version")
            .output()
            .map_err(|source| SandboxError::Spawn {
                path: self.interpreter.clone(),
                source,
            })?;
        let text = String::from_utf8_lossy(if out.stdout.is_empty() { &out.stderr } else { &out.stdout });
        Ok(text.trim().to_string())
    }

    pub fn request(&self, source: &str, entry: &str, args: Vec<Value>) -> ExecutionRequest {
        ExecutionRequest::new(source, entry, args).with_timeout(self.default_timeout_s)
    }

    pub fn execute(&self, request: &ExecutionRequest) -> Result<ExecutionResult, SandboxError> {
        request.validate()?;
        let scratch = tempfile::Builder::new().prefix("repairgraph-").tempdir()?;
        let source_path = scratch.path().join("candidate.py");
        let harness_path = scratch.path().join("harness.py");
        std::fs::write(&source_path, &request.source)?;
        std::fs::write(&harness_path, HARNESS)?;

        let nonce = uuid::Uuid::new_v4().simple().to_string();
        let stdin_line = serde_json::json!({
            "nonce": nonce,
            "source_path": source_path.to_string_lossy(),
            "entry": request.entry,
            "args": request.args,
        })
        .to_string();

        let started = Instant::now();
        let mut child = Command::new(&self.interpreter)
            .args(["-I", "-B", "-X", "utf8"])
            .arg(&harness_path)
            .current_dir(scratch.path())
            .env("PYTHONIOENCODING", "utf-8")
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| SandboxError::Spawn {
                path: self.interpreter.clone(),
                source,
            })?;

        if let Some(mut stdin) = child.stdin.take() {
            // A child that dies before reading stdin is reported through its exit status.
            let _ = stdin.write_all(stdin_line.as_bytes());
            let _ = stdin.write_all(b"\n");
        }
        let stdout_reader = spawn_reader(child.stdout.take());
        let stderr_reader = spawn_reader(child.stderr.take());

        let deadline = Duration::from_secs_f64(request.timeout_s);
        let exit = wait_with_deadline(&mut child, started, deadline)?;
        let raw_stdout = stdout_reader.join().unwrap_or_default();
        let stderr = stderr_reader.join().unwrap_or_default();
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;

        let Some(status) = exit else {
            return Ok(ExecutionResult::failure(
                ExecutionStatus::Timeout,
                StructuredError::simple(
                    "Timeout",
                    format!("execution exceeded {}s and was killed", request.timeout_s),
                ),
                raw_stdout,
                stderr,
                wall_ms,
            ));
        };

        let (user_stdout, envelope) = split_envelope(&raw_stdout, &nonce);
        let parsed = envelope.map(serde_json::from_str::<Envelope>);
        match parsed {
            Some(Ok(env)) => classify(env, user_stdout, stderr, wall_ms),
            other => {
                let problem = match other {
                    Some(Err(e)) => format!("unparseable envelope: {e}"),
                    _ => "no envelope on stdout".to_string(),
                };
                if status.success() {
                    return Err(SandboxError::HarnessFailure(problem));
                }
                let message = format!("interpreter died ({}) without reporting a result", describe_exit(status));
                let mut error = StructuredError::simple("Crash", message);
                error.traceback_text = stderr.clone();
                Ok(ExecutionResult::failure(ExecutionStatus::Crash, error, user_stdout, stderr, wall_ms))
            }
        }
    }
}

fn classify(env: Envelope, stdout: String, stderr: String, wall_ms: f64) -> Result<ExecutionResult, SandboxError> {
    let status = match env.status.as_str() {
        "success" => ExecutionStatus::Success,
        "exception" => ExecutionStatus::Exception,
        "syntax_error" => ExecutionStatus::SyntaxError,
        other => return Err(SandboxError::HarnessFailure(format!("unknown envelope status {other:?}"))),
    };
    if status == ExecutionStatus::Success {
        return Ok(ExecutionResult {
            status,
            stdout,
            stderr,
            return_value: Some(env.return_value.unwrap_or(Value::Null)),
            error: None,
            wall_ms,
        });
    }
    let Some(raw) = env.error else {
        return Err(SandboxError::HarnessFailure("failure envelope without error".into()));
    };
    // The harness names the exception class directly; the traceback supplies the locus.
    let located = if raw.traceback_text.is_empty() {
        None
    } else {
        Some(parse_traceback(&raw.traceback_text))
    };
    let error = StructuredError {
        error_type: if raw.error_type.is_empty() { "UnknownError".into() } else { raw.error_type },
        message: raw.message,
        line: located.as_ref().and_then(|l| l.line),
        function: located.and_then(|l| l.function),
        traceback_text: raw.traceback_text,
    };
    Ok(ExecutionResult::failure(status, error, stdout, stderr, wall_ms))
}

/// Remove the nonce-framed envelope from captured stdout. Returns the
/// remaining user output and the envelope body, if one was found.
fn split_envelope<'a>(stdout: &'a str, nonce: &str) -> (String, Option<&'a str>) {
    let marker = format!("<<{nonce}>>");
    let Some(open) = stdout.find(&marker) else {
        return (stdout.to_string(), None);
    };
    let body_start = open + marker.len();
    let Some(close_rel) = stdout[body_start..].find(&marker) else {
        return (stdout.to_string(), None);
    };
    let close = body_start + close_rel;
    let body = stdout[body_start..close].trim();
    // The harness writes "\n<<nonce>>\n{json}\n<<nonce>>\n".
    let before = stdout[..open].strip_suffix('\n').unwrap_or(&stdout[..open]);
    let after_close = &stdout[close + marker.len()..];
    let after = after_close.strip_prefix('\n').unwrap_or(after_close);
    (format!("{before}{after}"), Some(body))
}

fn spawn_reader<R: Read + Send + 'static>(pipe: Option<R>) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut p) = pipe {
            let _ = p.read_to_end(&mut buf);
        }
        String::from_utf8_lossy(&buf).into_owned()
    })
}

/// `Ok(None)` when the deadline passed and the child was killed.
fn wait_with_deadline(child: &mut Child, started: Instant, deadline: Duration) -> std::io::Result<Option<ExitStatus>> {
    loop {
        if let Some(status) = child.try_wait()? {
            return Ok(Some(status));
        }
        if started.elapsed() >= deadline {
            let _ = child.kill();
            child.wait()?;
            return Ok(None);
        }
        thread::sleep(POLL);
    }
}

fn describe_exit(status: ExitStatus) -> String {
    #[cfg(unix)]
    {
        use std::os::unix::process::ExitStatusExt;
        if let Some(sig) = status.signal() {
            return format!("signal {sig}");
        }
    }
    match status.code() {
        Some(code) => format!("exit code {code}"),
        None => "unknown exit".to_string(),
    }
}
