use super::{Embedder, ProviderError};
use crate::embedding::{normalize_f64, EmbeddingMatrix};

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Debug, Clone)]
pub struct SplitMix64(u64);

impl SplitMix64 {
    pub fn new(state: u64) -> Self {
        Self(state)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in [−1, 1) from the top 53 bits.
    pub fn next_signed_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (2.0 / (1u64 << 53) as f64) - 1.0
    }
}

/// Bag-of-tokens embedding: every whitespace token seeds a SplitMix64
/// stream (FNV-1a of the token xor `seed`) yielding `dim` values in
/// [−1, 1]; token vectors are summed and L2-normalized. Text without tokens
/// maps to e₁.
pub fn hash_embed(texts: &[&str], dim: usize, seed: u64) -> EmbeddingMatrix {
    let mut out = EmbeddingMatrix::empty(dim);
    let mut acc = vec![0.0f64; dim];
    for text in texts {
        acc.iter_mut().for_each(|x| *x = 0.0);
        for token in text.split_whitespace() {
            let mut stream = SplitMix64::new(fnv1a64(token.as_bytes()) ^ seed);
            for x in acc.iter_mut() {
                *x += stream.next_signed_unit();
            }
        }
        out.push_row(&normalize_f64(&acc));
    }
    out
}

#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 1, "hash embedder dim must be >= 1");
        Self { dim, seed }
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> String {
        format!("hash-v1:dim={}:seed={}", self.dim, self.seed)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn batch_size(&self) -> usize {
        1024
    }

    fn embed(&self, texts: &[&str]) -> Result<EmbeddingMatrix, ProviderError> {
        Ok(hash_embed(texts, self.dim, self.seed))
    }
}
