use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::embed::DIMENSION;
use super::store::MemoryRecord;
use super::MemoryError;

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize)]
struct SnapshotOut<'a> {
    version: u32,
    dimension: usize,
    records: Vec<&'a MemoryRecord>,
    digest: String,
}

#[derive(Deserialize)]
struct SnapshotIn {
    version: u32,
    dimension: usize,
    records: Vec<MemoryRecord>,
    digest: String,
}

fn records_digest<T: Serialize>(records: &[T]) -> String {
    let bytes = serde_json::to_vec(records).expect("records serialize");
    hex::encode(Sha256::digest(&bytes))
}

pub(super) fn write<'a>(path: &Path, records: impl Iterator<Item = &'a MemoryRecord>) -> Result<(), MemoryError> {
    let records: Vec<&MemoryRecord> = records.collect();
    let snapshot = SnapshotOut {
        version: SNAPSHOT_VERSION,
        dimension: DIMENSION,
        digest: records_digest(&records),
        records,
    };
    let bytes = serde_json::to_vec_pretty(&snapshot).expect("snapshot serializes");

    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| MemoryError::Io(format!("{}: {e}", dir.display())))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| MemoryError::Io(e.to_string()))?;
    tmp.write_all(&bytes)
        .and_then(|_| tmp.as_file().sync_all())
        .map_err(|e| MemoryError::Io(e.to_string()))?;
    tmp.persist(path)
        .map_err(|e| MemoryError::Io(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

pub(super) fn read(path: &Path) -> Result<Vec<MemoryRecord>, MemoryError> {
    let bytes = std::fs::read(path).map_err(|e| MemoryError::Io(format!("{}: {e}", path.display())))?;
    parse(&bytes)
}

pub(super) fn parse(bytes: &[u8]) -> Result<Vec<MemoryRecord>, MemoryError> {
    let corrupt = |msg: String| MemoryError::CorruptSnapshot(msg);
    let snap: SnapshotIn = serde_json::from_slice(bytes).map_err(|e| corrupt(e.to_string()))?;
    if snap.version != SNAPSHOT_VERSION {
        return Err(corrupt(format!("unsupported version {}", snap.version)));
    }
    if snap.dimension != DIMENSION {
        return Err(corrupt(format!("dimension {} != {DIMENSION}", snap.dimension)));
    }
    if records_digest(&snap.records) != snap.digest {
        return Err(corrupt("digest mismatch".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for r in &snap.records {
        if !seen.insert(r.id) {
            return Err(corrupt(format!("duplicate record id {}", r.id)));
        }
        if r.embedding.values().len() != DIMENSION {
            return Err(corrupt(format!("record {} has embedding of length {}", r.id, r.embedding.values().len())));
        }
        let norm = r.embedding.norm();
        if !(r.embedding.is_zero() || (norm - 1.0).abs() <= 1e-6) {
            return Err(corrupt(format!("record {} embedding norm {norm}", r.id)));
        }
        if r.occurrence_count == 0 {
            return Err(corrupt(format!("record {} has zero occurrence count", r.id)));
        }
        if r.updated_at < r.created_at {
            return Err(corrupt(format!("record {} updated before it was created", r.id)));
        }
    }
    Ok(snap.records)
}
