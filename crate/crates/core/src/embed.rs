//! Text embedding interface shared by contrast-query selection and the
//! retrieval baseline.

use crate::attention::fold_token;
use crate::doc::WhitespaceTokenizer;
use crate::error::Result;

pub trait Embedder: Send + Sync {
    /// Returns a unit-norm embedding of `text`.
    fn embed(&self, text: &str) -> Result<Vec<f32>>;
}

/// Scales `v` to unit length. A zero vector becomes the first basis vector.
pub fn normalize(mut v: Vec<f32>) -> Vec<f32> {
    let norm = v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        v.iter_mut().for_each(|x| *x = 0.0);
        if let Some(first) = v.first_mut() {
            *first = 1.0;
        }
        return v;
    }
    v.iter_mut().for_each(|x| *x = (*x as f64 / norm) as f32);
    v
}

pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Hashed bag-of-words embedding. Pure function of the folded words of the text.
#[derive(Debug, Clone, Copy)]
pub struct StubEmbedder {
    dim: usize,
}

impl Default for StubEmbedder {
    fn default() -> Self {
        StubEmbedder { dim: 1024 }
    }
}

impl StubEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        StubEmbedder { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl Embedder for StubEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f32>> {
        let mut v = vec![0.0f32; self.dim];
        for word in WhitespaceTokenizer::words(text) {
            let id = WhitespaceTokenizer::word_id(&fold_token(word));
            v[id as usize % self.dim] += 1.0;
        }
        Ok(normalize(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stub_is_unit_and_pure() {
        let e = StubEmbedder::default();
        let a = e.embed("The cat sat on the mat").unwrap();
        let b = e.embed("The cat sat on the mat").unwrap();
        assert_eq!(a, b);
        let n: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
        let empty = e.embed("").unwrap();
        assert_eq!(empty[0], 1.0);
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]) - 1.0).abs() < 1e-12);
        assert!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[0.0, 1.0]), 0.0);
    }
}
