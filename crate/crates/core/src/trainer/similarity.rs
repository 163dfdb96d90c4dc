//! Late-interaction similarity: the mean over conversation rows of the best
//! dot product against any summary row.

use crate::encoder::TokenEmbeddingMatrix;
use crate::error::{Error, Result};

/// Score plus, for each query row, the index of its best key row (lowest
/// index on ties).
#[derive(Debug, Clone, PartialEq)]
pub struct MaxSim {
    pub score: f64,
    pub argmax: Vec<usize>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// MaxSim over flat row-major buffers.
pub fn maxsim_rows(query: &[f64], keys: &[f64], dim: usize) -> MaxSim {
    let mut total = 0.0;
    let mut argmax = Vec::with_capacity(query.len() / dim);
    for q in query.chunks_exact(dim) {
        let mut best = f64::NEG_INFINITY;
        let mut best_j = 0;
        for (j, k) in keys.chunks_exact(dim).enumerate() {
            let s = dot(q, k);
            if s > best {
                best = s;
                best_j = j;
            }
        }
        total += best;
        argmax.push(best_j);
    }
    let rows = argmax.len();
    MaxSim {
        score: total / rows as f64,
        argmax,
    }
}

/// MaxSim of `f64` query rows against stored `f32` key rows.
pub fn maxsim_f32(query: &[f64], keys: &[f32], dim: usize) -> f64 {
    let mut total = 0.0;
    let mut rows = 0usize;
    for q in query.chunks_exact(dim) {
        let best = keys
            .chunks_exact(dim)
            .map(|k| q.iter().zip(k).map(|(a, &b)| a * b as f64).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        total += best;
        rows += 1;
    }
    total / rows as f64
}

/// Similarity of a weighted conversation embedding to a summary embedding.
pub fn similarity(conversation: &TokenEmbeddingMatrix, summary: &TokenEmbeddingMatrix) -> Result<f64> {
    if conversation.dim != summary.dim {
        return Err(Error::DimensionMismatch {
            left: conversation.dim,
            right: summary.dim,
        });
    }
    if conversation.rows() == 0 || summary.rows() == 0 {
        return Err(Error::Shape("similarity needs non-empty matrices".into()));
    }
    Ok(maxsim_rows(&conversation.data, &summary.data, conversation.dim).score)
}
