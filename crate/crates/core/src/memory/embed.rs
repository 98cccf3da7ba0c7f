use serde::{Deserialize, Serialize};

use crate::par::{self, Exec};

/// Embedding width.
pub const DIMENSION: usize = 256;

/// Unit-norm vector of [`DIMENSION`] values, or all zeros for text without
/// tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn zero() -> Self {
        Self(vec![0.0; DIMENSION])
    }

    /// Wrap raw values. Fails unless the length is [`DIMENSION`].
    pub fn from_values(values: Vec<f64>) -> Option<Self> {
        (values.len() == DIMENSION).then_some(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|x| *x == 0.0)
    }

    pub fn cosine(&self, other: &Self) -> f64 {
        cosine(&self.0, &other.0)
    }
}

/// Cosine similarity; 0 when either side is the zero vector.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Text to vector. The default is [`HashingEmbedder`]; a remote model can be
/// plugged in behind the same contract.
pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> EmbeddingVector;
}

/// Signed feature hashing over lowercase words and their character
/// trigrams.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashingEmbedder;

impl Embedder for HashingEmbedder {
    fn embed(&self, text: &str) -> EmbeddingVector {
        embed(text)
    }
}

pub fn embed(text: &str) -> EmbeddingVector {
    let mut acc = vec![0.0f64; DIMENSION];
    let mut any = false;
    for_each_token(text, |token| {
        any = true;
        let h = fnv1a64(token.as_bytes());
        let bucket = (h % DIMENSION as u64) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        acc[bucket] += sign;
    });
    if !any {
        return EmbeddingVector::zero();
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        // Every token cancelled out. Still text, so keep a deterministic unit vector.
        acc[0] = 1.0;
        return EmbeddingVector(acc);
    }
    for x in &mut acc {
        *x /= norm;
    }
    EmbeddingVector(acc)
}

pub fn embed_batch(exec: Exec, texts: &[String]) -> Vec<EmbeddingVector> {
    par::map(exec, texts, |t| embed(t))
}

/// Tokens in hashing order: each word as `w:<word>` followed by its padded
/// trigrams as `t:<abc>`.
pub fn tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for_each_token(text, |t| out.push(t.to_string()));
    out
}

fn for_each_token(text: &str, mut f: impl FnMut(&str)) {
    let mut token = String::with_capacity(32);
    for word in words(text) {
        token.clear();
        token.push_str("w:");
        token.push_str(&word);
        f(&token);

        let padded: Vec<char> = std::iter::once('<').chain(word.chars()).chain(std::iter::once('>')).collect();
        for window in padded.windows(3) {
            token.clear();
            token.push_str("t:");
            token.extend(window);
            f(&token);
        }
    }
}

/// Maximal runs of alphanumerics and underscores, lowercased.
fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !(c.is_alphanumeric() || c == '_'))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    h
}
