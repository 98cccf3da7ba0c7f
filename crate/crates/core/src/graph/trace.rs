use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::NodeName;

/// One executed node. Serializes to `{"step", "node", "digest", "ms"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub node: NodeName,
    /// Hex SHA-256 of the canonical JSON form of the state after the node ran.
    pub digest: String,
    pub ms: f64,
}

/// Ordered record of every step a run took.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExecutionTrace {
    steps: Vec<TraceStep>,
}

impl ExecutionTrace {
    pub(crate) fn push(&mut self, step: TraceStep) {
        debug_assert_eq!(step.step, self.steps.len());
        self.steps.push(step);
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[TraceStep] {
        &self.steps
    }

    pub fn nodes(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.node.as_str()).collect()
    }

    pub fn count(&self, node: &str) -> usize {
        self.steps.iter().filter(|s| s.node == node).count()
    }

    pub fn last_digest(&self) -> Option<&str> {
        self.steps.last().map(|s| s.digest.as_str())
    }

    /// Node sequence and digests, ignoring timings.
    pub fn fingerprint(&self) -> Vec<(String, String)> {
        self.steps
            .iter()
            .map(|s| (s.node.to_string(), s.digest.clone()))
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("trace serializes")
    }
}

/// Stable content hash of a state. serde_json emits struct fields in
/// declaration order and `Value` maps sorted, so equal states hash equally.
pub fn state_digest<S: Serialize>(state: &S) -> String {
    let bytes = serde_json::to_vec(state).expect("state must serialize to JSON");
    hex::encode(Sha256::digest(&bytes))
}
