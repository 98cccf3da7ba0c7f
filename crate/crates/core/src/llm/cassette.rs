use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ChatBackend, CompletionRequest, LlmError};

/// One line of a cassette file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub key: String,
    pub template: String,
    pub response: String,
}

/// Hex SHA-256 over the template name and the rendered prompt.
pub fn cassette_key(request: &CompletionRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update(request.template.as_bytes());
    hasher.update([0u8]);
    hasher.update(request.rendered_prompt().as_bytes());
    hex::encode(hasher.finalize())
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> LlmError {
    LlmError::Cassette(format!("{}: {e}", path.display()))
}

/// Serves responses from a cassette file. Repeated keys replay in the order
/// they were recorded.
#[derive(Debug, Default)]
pub struct ReplayBackend {
    entries: Mutex<HashMap<String, VecDeque<String>>>,
}

impl ReplayBackend {
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let file = File::open(path).map_err(|e| io_err(path, e))?;
        let mut entries: Vec<CassetteEntry> = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| io_err(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry = serde_json::from_str(&line)
                .map_err(|e| io_err(path, format!("line {}: {e}", lineno + 1)))?;
            entries.push(entry);
        }
        Ok(Self::from_entries(entries))
    }

    pub fn from_entries(entries: impl IntoIterator<Item = CassetteEntry>) -> Self {
        let mut map: HashMap<String, VecDeque<String>> = HashMap::new();
        for e in entries {
            map.entry(e.key).or_default().push_back(e.response);
        }
        Self {
            entries: Mutex::new(map),
        }
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let key = cassette_key(request);
        let mut entries = self.entries.lock().expect("cassette lock");
        entries
            .get_mut(&key)
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| LlmError::MockMiss(format!("no cassette entry for {} ({key})", request.template)))
    }
}

/// Forwards to an inner backend and appends every answer to a cassette.
pub struct RecordingBackend {
    inner: Box<dyn ChatBackend>,
    path: PathBuf,
    file: Mutex<File>,
}

impl RecordingBackend {
    pub fn new(inner: impl ChatBackend + 'static, path: impl Into<PathBuf>) -> Result<Self, LlmError> {
        let path = path.into();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        Ok(Self {
            inner: Box::new(inner),
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl ChatBackend for RecordingBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let response = self.inner.complete(request)?;
        let entry = CassetteEntry {
            key: cassette_key(request),
            template: request.template.clone(),
            response: response.clone(),
        };
        let mut line = serde_json::to_string(&entry).expect("entry serializes");
        line.push('\n');
        let mut file = self.file.lock().expect("cassette lock");
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| io_err(&self.path, e))?;
        Ok(response)
    }
}
