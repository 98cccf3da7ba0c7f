//! Vector bug memory: a deterministic hashing embedder, an exhaustive
//! cosine top-k store, threshold filtering, and JSON snapshots.

mod embed;
mod snapshot;
mod store;

use thiserror::Error;
use uuid::Uuid;

pub use embed::{cosine, embed, embed_batch, tokens, Embedder, EmbeddingVector, HashingEmbedder, DIMENSION};
pub use snapshot::SNAPSHOT_VERSION;
pub use store::{filter_hits, MemoryRecord, MemoryStore, SearchHit};

/// Default number of hits requested per search.
pub const DEFAULT_K: usize = 5;
/// Default minimum cosine score for a hit to count as a match.
pub const DEFAULT_TAU: f64 = 0.35;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("summary must not be empty")]
    EmptySummary,
    #[error("no memory record with id {0}")]
    UnknownRecord(Uuid),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("snapshot i/o failure: {0}")]
    Io(String),
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
}
