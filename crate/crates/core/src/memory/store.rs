use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use super::embed::{EmbeddingVector, Embedder, HashingEmbedder};
use super::snapshot;
use super::MemoryError;
use crate::par::{self, Exec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub id: Uuid,
    pub summary: String,
    pub error_type: String,
    pub embedding: EmbeddingVector,
    pub occurrence_count: u32,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub source_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub record: MemoryRecord,
    pub score: f64,
}

/// Keep hits scoring at least `threshold`, in their original order.
pub fn filter_hits(hits: &[SearchHit], threshold: f64) -> Vec<SearchHit> {
    hits.iter().filter(|h| h.score >= threshold).cloned().collect()
}

/// Embedded bug-memory store. Readers share, writers serialize.
pub struct MemoryStore {
    records: RwLock<BTreeMap<Uuid, MemoryRecord>>,
    embedder: Arc<dyn Embedder>,
    exec: Exec,
}

impl Default for MemoryStore {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for MemoryStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MemoryStore")
            .field("len", &self.len())
            .field("exec", &self.exec)
            .finish_non_exhaustive()
    }
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::with_embedder(Arc::new(HashingEmbedder))
    }

    pub fn with_embedder(embedder: Arc<dyn Embedder>) -> Self {
        Self {
            records: RwLock::new(BTreeMap::new()),
            embedder,
            exec: Exec::default(),
        }
    }

    /// Scan strategy for [`search`](Self::search).
    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn from_records(records: impl IntoIterator<Item = MemoryRecord>) -> Self {
        let store = Self::new();
        {
            let mut map = store.records.write().expect("store lock");
            for r in records {
                map.insert(r.id, r);
            }
        }
        store
    }

    pub fn len(&self) -> usize {
        self.records.read().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All records, ordered by id.
    pub fn records(&self) -> Vec<MemoryRecord> {
        self.records.read().expect("store lock").values().cloned().collect()
    }

    pub fn get(&self, id: &Uuid) -> Option<MemoryRecord> {
        self.records.read().expect("store lock").get(id).cloned()
    }

    /// Sum of occurrence counts over all records.
    pub fn total_occurrences(&self) -> u64 {
        self.records
            .read()
            .expect("store lock")
            .values()
            .map(|r| u64::from(r.occurrence_count))
            .sum()
    }

    pub fn embed(&self, text: &str) -> EmbeddingVector {
        self.embedder.embed(text)
    }

    pub fn search(&self, query: &str, k: usize) -> Result<Vec<SearchHit>, MemoryError> {
        self.search_with(self.exec, query, k)
    }

    pub fn search_with(&self, exec: Exec, query: &str, k: usize) -> Result<Vec<SearchHit>, MemoryError> {
        let q = self.embedder.embed(query);
        self.search_vector_with(exec, &q, k)
    }

    /// Exhaustive top-`k` scan: score descending, ties by id ascending.
    pub fn search_vector_with(
        &self,
        exec: Exec,
        query: &EmbeddingVector,
        k: usize,
    ) -> Result<Vec<SearchHit>, MemoryError> {
        if k == 0 {
            return Err(MemoryError::InvalidK);
        }
        let records = self.records.read().expect("store lock");
        let all: Vec<&MemoryRecord> = records.values().collect();
        let mut scored: Vec<(f64, &MemoryRecord)> =
            par::map(exec, &all, |r| (query.cosine(&r.embedding), *r));

        let by_rank = |a: &(f64, &MemoryRecord), b: &(f64, &MemoryRecord)| {
            b.0.total_cmp(&a.0).then_with(|| a.1.id.cmp(&b.1.id))
        };
        if scored.len() > k {
            scored.select_nth_unstable_by(k - 1, by_rank);
            scored.truncate(k);
        }
        scored.sort_unstable_by(by_rank);

        Ok(scored
            .into_iter()
            .map(|(score, r)| SearchHit {
                record: r.clone(),
                score,
            })
            .collect())
    }

    pub fn create_record(
        &self,
        summary: &str,
        error_type: &str,
        source_digest: &str,
    ) -> Result<MemoryRecord, MemoryError> {
        if summary.trim().is_empty() {
            return Err(MemoryError::EmptySummary);
        }
        let now = Utc::now();
        let record = MemoryRecord {
            id: Uuid::new_v4(),
            summary: summary.to_string(),
            error_type: error_type.to_string(),
            embedding: self.embedder.embed(summary),
            occurrence_count: 1,
            created_at: now,
            updated_at: now,
            source_digest: source_digest.to_string(),
        };
        self.records
            .write()
            .expect("store lock")
            .insert(record.id, record.clone());
        Ok(record)
    }

    pub fn update_record(&self, id: &Uuid, new_summary: &str) -> Result<MemoryRecord, MemoryError> {
        if new_summary.trim().is_empty() {
            return Err(MemoryError::EmptySummary);
        }
        let embedding = self.embedder.embed(new_summary);
        let mut records = self.records.write().expect("store lock");
        let record = records.get_mut(id).ok_or(MemoryError::UnknownRecord(*id))?;
        record.summary = new_summary.to_string();
        record.embedding = embedding;
        record.occurrence_count += 1;
        record.updated_at = Utc::now().max(record.created_at);
        Ok(record.clone())
    }

    /// Atomic snapshot write.
    pub fn persist(&self, path: &Path) -> Result<(), MemoryError> {
        let records = self.records.read().expect("store lock");
        snapshot::write(path, records.values())
    }

    pub fn load(path: &Path) -> Result<Self, MemoryError> {
        Ok(Self::from_records(snapshot::read(path)?))
    }

    /// Empty store when `path` does not exist yet.
    pub fn load_or_empty(path: &Path) -> Result<Self, MemoryError> {
        if path.exists() {
            Self::load(path)
        } else {
            Ok(Self::new())
        }
    }
}
