//! Independent reference implementations used to check the library.
#![allow(dead_code)]

pub mod graph;

use std::collections::HashMap;

use rand::Rng;
use uuid::Uuid;

use repairgraph::memory::{MemoryRecord, MemoryStore};

const DIM: usize = 256;

fn fnv(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(14695981039346656037u64, |h, b| (h ^ *b as u64).wrapping_mul(1099511628211))
}

/// Straight-line re-implementation of the hashing embedder.
pub fn reference_embed(text: &str) -> Vec<f64> {
    let mut words: Vec<String> = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() || c == '_' {
            cur.push(c);
        } else if !cur.is_empty() {
            words.push(cur.to_lowercase());
            cur.clear();
        }
    }
    if !cur.is_empty() {
        words.push(cur.to_lowercase());
    }

    let mut counts: HashMap<usize, f64> = HashMap::new();
    for w in &words {
        let mut toks = vec![format!("w:{w}")];
        let padded: Vec<char> = format!("<{w}>").chars().collect();
        for i in 0..padded.len() - 2 {
            toks.push(format!("t:{}{}{}", padded[i], padded[i + 1], padded[i + 2]));
        }
        for t in toks {
            let h = fnv(t.as_bytes());
            let sign = if h & (1 << 63) != 0 { -1.0 } else { 1.0 };
            *counts.entry((h % DIM as u64) as usize).or_default() += sign;
        }
    }
    let mut v = vec![0.0; DIM];
    for (i, c) in counts {
        v[i] = c;
    }
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

fn reference_cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
    }
}

/// Score every record, fully sort, take the first `k`.
pub fn brute_force_search(records: &[MemoryRecord], query: &str, k: usize) -> Vec<(Uuid, f64)> {
    let q = reference_embed(query);
    let mut all: Vec<(Uuid, f64)> = records
        .iter()
        .map(|r| (r.id, reference_cosine(&q, r.embedding.values())))
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

const VOCAB: &[&str] = &[
    "ZeroDivisionError", "IndexError", "TypeError", "KeyError", "division", "by", "zero", "list",
    "index", "out", "of", "range", "divide_two_numbers", "triangle_area", "None", "value", "str", "int",
    "unsupported", "operand", "recursion", "depth", "exceeded", "returned", "expected", "fix", "guard",
];

/// One to eight words; occasionally repeats a fixed phrase so exact ties occur.
pub fn random_text<R: Rng>(rng: &mut R) -> String {
    if rng.random_bool(0.05) {
        return "division by zero".to_string();
    }
    let n = rng.random_range(1..=8);
    (0..n)
        .map(|_| {
            if rng.random_bool(0.15) {
                let len = rng.random_range(1..8);
                (0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect::<String>()
            } else {
                VOCAB[rng.random_range(0..VOCAB.len())].to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn random_store<R: Rng>(rng: &mut R, size: usize) -> MemoryStore {
    let store = MemoryStore::new();
    for i in 0..size {
        let text = random_text(rng);
        store
            .create_record(&text, VOCAB[i % 4], &format!("{i:x}"))
            .expect("non-empty text");
    }
    store
}
