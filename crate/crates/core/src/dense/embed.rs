use crate::tokenize::{analyze, fnv1a64};

use super::{DenseError, EmbeddingProvider};

/// Signed feature hashing of analyzer tokens into `dim` buckets, L2
/// normalized. Text without tokens maps to the zero vector.
pub fn embed_local(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    if dim == 0 {
        return v;
    }
    for tok in analyze(text) {
        let h = fnv1a64(tok.as_bytes());
        let bucket = (h % dim as u64) as usize;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[bucket] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

pub const MIN_LOCAL_DIM: usize = 8;

/// Deterministic in-process provider backed by [`embed_local`]. Queries and
/// passages share the same hasher.
#[derive(Debug, Clone, Copy)]
pub struct LocalProvider {
    dim: usize,
}

impl LocalProvider {
    pub fn new(dim: usize) -> Result<Self, DenseError> {
        if dim < MIN_LOCAL_DIM {
            return Err(DenseError::Config(format!(
                "local provider needs dim >= {MIN_LOCAL_DIM}, got {dim}"
            )));
        }
        Ok(Self { dim })
    }
}

impl EmbeddingProvider for LocalProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_query(&self, text: &str) -> Result<Vec<f64>, DenseError> {
        Ok(embed_local(text, self.dim))
    }

    fn embed_passage(&self, text: &str) -> Result<Vec<f64>, DenseError> {
        Ok(embed_local(text, self.dim))
    }
}
