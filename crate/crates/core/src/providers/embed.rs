use sha2::{Digest, Sha256};

use super::ProviderError;
use crate::kgstore::tokens;

pub const LOCAL_DIMENSION: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    /// Hex SHA-256 of the embedded text.
    pub text_hash: String,
}

impl EmbeddingVector {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Cosine similarity; defined as 0 when either vector has zero norm or the
/// dimensions differ.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    if a.values.len() != b.values.len() {
        return 0.0;
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    dot / (na * nb)
}

/// Text embedding contract. Implementations must be referentially
/// transparent: the same text always yields the same vector.
pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError>;

    fn dimension(&self) -> usize;
}

/// Hashed bag-of-tokens embedding. A deterministic test double with no
/// semantic knowledge: two texts are similar only if they share tokens (or
/// their tokens collide in a bucket).
#[derive(Debug, Clone, Copy)]
pub struct LocalEmbedder {
    dimension: usize,
}

impl Default for LocalEmbedder {
    fn default() -> Self {
        Self { dimension: LOCAL_DIMENSION }
    }
}

impl LocalEmbedder {
    pub fn with_dimension(dimension: usize) -> Self {
        Self { dimension: dimension.max(1) }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a64(token.as_bytes()) % self.dimension as u64) as usize
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub(crate) fn text_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl Embedder for LocalEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let mut values = vec![0.0; self.dimension];
        for t in tokens(text) {
            values[self.bucket(&t)] += 1.0;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(EmbeddingVector { values, text_hash: text_hash(text) })
    }

    fn dimension(&self) -> usize {
        self.dimension
    }
}
