//! Signed feature hashing over unigrams and adjacent bigrams.
//!
//! Stand-in for a commercial embedding API: deterministic, dependency-free,
//! and good enough to carry cosine-similarity structure for the scorers.

use super::{TokenSeq, Vocab};

/// FNV-1a 64-bit over a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Hash a feature string mixed with the seed. The seed's little-endian
/// bytes are hashed before the feature bytes.
fn feature_hash(seed: u64, feature: &str) -> u64 {
    let mut bytes = Vec::with_capacity(8 + feature.len());
    bytes.extend_from_slice(&seed.to_le_bytes());
    bytes.extend_from_slice(feature.as_bytes());
    fnv1a64(&bytes)
}

/// Separator between the two tokens of a bigram feature; cannot occur
/// inside a token (tokens never contain control characters after
/// whitespace splitting).
pub const BIGRAM_SEP: char = '\u{1f}';

/// Embed a token sequence into `dim` buckets.
///
/// Each unigram and each adjacent bigram is hashed (FNV-1a 64-bit of the
/// token string(s) mixed with `seed`) to a bucket `hash % dim`, with sign
/// taken from the top hash bit, and accumulated. Nonempty input is
/// L2-normalized; empty input yields the zero vector.
pub fn embed(vocab: &Vocab, seq: &TokenSeq, dim: usize, seed: u64) -> Vec<f64> {
    assert!(dim >= 2, "embedding dimension must be >= 2");
    let mut v = vec![0.0f64; dim];
    let words: Vec<&str> = seq.ids.iter().map(|&id| vocab.token(id)).collect();
    let mut add = |feature: &str| {
        let h = feature_hash(seed, feature);
        let bucket = (h % dim as u64) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[bucket] += sign;
    };
    for w in &words {
        add(w);
    }
    for pair in words.windows(2) {
        let feature = format!("{}{}{}", pair[0], BIGRAM_SEP, pair[1]);
        add(&feature);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    v
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine similarity; zero if either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}
