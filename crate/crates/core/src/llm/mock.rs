use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, CompletionRequest, LlmError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaybookEntry {
    /// Substring that must occur in the rendered prompt.
    #[serde(rename = "match")]
    pub matcher: String,
    pub response: String,
}

/// Ordered script of responses. Each request must match the entry under
/// the cursor; there is no fallback.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockPlaybook {
    pub entries: Vec<PlaybookEntry>,
    #[serde(skip)]
    cursor: usize,
}

impl MockPlaybook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(mut self, matcher: impl Into<String>, response: impl Into<String>) -> Self {
        self.entries.push(PlaybookEntry {
            matcher: matcher.into(),
            response: response.into(),
        });
        self
    }

    pub fn from_entries(entries: Vec<PlaybookEntry>) -> Self {
        Self { entries, cursor: 0 }
    }

    /// Accepts either `{"entries": [...]}` or a bare array of entries.
    pub fn from_json(text: &str) -> Result<Self, LlmError> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Shape {
            Wrapped(MockPlaybook),
            Bare(Vec<PlaybookEntry>),
        }
        match serde_json::from_str::<Shape>(text) {
            Ok(Shape::Wrapped(p)) => Ok(Self::from_entries(p.entries)),
            Ok(Shape::Bare(entries)) => Ok(Self::from_entries(entries)),
            Err(e) => Err(LlmError::Cassette(format!("bad playbook: {e}"))),
        }
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Cassette(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn remaining(&self) -> usize {
        self.entries.len() - self.cursor
    }

    pub fn next_response(&mut self, prompt: &str) -> Result<String, LlmError> {
        let Some(entry) = self.entries.get(self.cursor) else {
            return Err(LlmError::MockMiss(format!(
                "playbook exhausted after {} entries",
                self.entries.len()
            )));
        };
        if !prompt.contains(&entry.matcher) {
            return Err(LlmError::MockMiss(format!(
                "entry {} expects the prompt to contain {:?}",
                self.cursor, entry.matcher
            )));
        }
        self.cursor += 1;
        Ok(entry.response.clone())
    }
}

/// Backend serving a [`MockPlaybook`]. Calls are serialized because entry
/// order is meaningful.
#[derive(Debug, Default)]
pub struct MockBackend {
    playbook: Mutex<MockPlaybook>,
}

impl MockBackend {
    pub fn new(playbook: MockPlaybook) -> Self {
        Self {
            playbook: Mutex::new(playbook),
        }
    }

    pub fn remaining(&self) -> usize {
        self.playbook.lock().expect("playbook lock").remaining()
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let prompt = request.rendered_prompt();
        self.playbook.lock().expect("playbook lock").next_response(&prompt)
    }
}
