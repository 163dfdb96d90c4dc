//! Token encoder, relevance weighting and the weighted conversation embedding.
//!
//! A conversation is encoded into one row per token. History rows are scaled
//! by a relevance weight `w = sigmoid(rowᵀ · M · s + b)`, where `s` is the mean
//! row of the latest user utterance; latest-utterance rows keep weight 1.

pub mod checkpoint;
pub mod inspect;
pub(crate) mod model;
pub mod params;
pub mod tokenize;
pub mod vocab;

use serde::{Deserialize, Serialize};

use crate::corpus::Conversation;
use crate::error::{Error, Result};

pub use inspect::{dump_weights, weight_report, TokenWeight, WeightReport};
pub use params::{EncoderConfig, EncoderParams, LatestMeanSource, ModelDims, Tensors};
pub use tokenize::{tokenize, tokenize_latest, tokenize_text, TokenizedText};
pub use vocab::{build_vocab, Vocabulary};

/// Relevance logits are clamped to this magnitude so history weights stay
/// strictly inside (0, 1).
const LOGIT_CLAMP: f64 = 30.0;

/// Per-token vectors with their utterance attribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenEmbeddingMatrix {
    pub dim: usize,
    /// Row-major `rows x dim`.
    pub data: Vec<f64>,
    pub utterance_index: Vec<usize>,
    pub latest_mask: Vec<bool>,
}

impl TokenEmbeddingMatrix {
    /// Matrix from explicit rows; utterance 0, no latest tokens.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let n = rows.len();
        Self {
            dim,
            data: rows.iter().flatten().copied().collect(),
            utterance_index: vec![0; n],
            latest_mask: vec![false; n],
        }
    }

    pub fn rows(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }
}

/// One weight per token; 1 on latest-utterance tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceWeights {
    pub weights: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Encodes a tokenized text into per-token rows.
pub fn encode_tokens(tokens: &TokenizedText, params: &EncoderParams) -> Result<TokenEmbeddingMatrix> {
    let fwd = model::forward(tokens, params)?;
    Ok(TokenEmbeddingMatrix {
        dim: params.dims().dim,
        data: fwd.output,
        utterance_index: tokens.utterance_index.clone(),
        latest_mask: tokens.latest_mask.clone(),
    })
}

/// Mean of the rows flagged in `latest_mask`.
pub fn latest_mean(rows: &[f64], dim: usize, latest_mask: &[bool]) -> Result<Vec<f64>> {
    let mut mean = vec![0.0; dim];
    let mut count = 0usize;
    for (row, _) in rows.chunks_exact(dim).zip(latest_mask).filter(|(_, m)| **m) {
        count += 1;
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    if count == 0 {
        return Err(Error::NoLatestTokens);
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    Ok(mean)
}

/// `M · s` for the bilinear relevance scorer.
fn project_latest(params: &EncoderParams, s: &[f64]) -> Vec<f64> {
    let d = params.dims().dim;
    let m = &params.tensors.relevance;
    (0..d)
        .map(|i| m[i * d..(i + 1) * d].iter().zip(s).map(|(a, b)| a * b).sum())
        .collect()
}

fn weights_from(rows: &[f64], latest_mask: &[bool], ms: &[f64], bias: f64) -> (Vec<f64>, Vec<bool>) {
    let dim = ms.len();
    let mut clamped = vec![false; latest_mask.len()];
    let weights = rows
        .chunks_exact(dim)
        .zip(latest_mask)
        .enumerate()
        .map(|(t, (row, &latest))| {
            if latest {
                return 1.0;
            }
            let logit = row.iter().zip(ms).map(|(a, b)| a * b).sum::<f64>() + bias;
            clamped[t] = logit.abs() > LOGIT_CLAMP;
            sigmoid(logit.clamp(-LOGIT_CLAMP, LOGIT_CLAMP))
        })
        .collect();
    (weights, clamped)
}

/// Relevance weights for an encoded conversation. The latest-utterance mean
/// is taken over the rows selected by the params' [`LatestMeanSource`]; pass
/// `pre_norm` rows when that source is [`LatestMeanSource::PreNorm`].
pub fn relevance_weights(
    embeddings: &TokenEmbeddingMatrix,
    pre_norm: Option<&[f64]>,
    params: &EncoderParams,
) -> Result<RelevanceWeights> {
    if embeddings.dim != params.dims().dim {
        return Err(Error::DimensionMismatch {
            left: embeddings.dim,
            right: params.dims().dim,
        });
    }
    let source = match (params.config.latest_mean, pre_norm) {
        (LatestMeanSource::PreNorm, Some(rows)) => rows,
        (LatestMeanSource::PreNorm, None) => {
            return Err(Error::Config("pre-normalization rows required for the latest mean".into()))
        }
        (LatestMeanSource::Output, _) => &embeddings.data,
    };
    let s = latest_mean(source, embeddings.dim, &embeddings.latest_mask)?;
    let ms = project_latest(params, &s);
    let (weights, _) = weights_from(
        &embeddings.data,
        &embeddings.latest_mask,
        &ms,
        params.tensors.relevance_bias[0],
    );
    Ok(RelevanceWeights { weights })
}

/// Forward state of a weighted conversation embedding, kept for backprop.
#[derive(Debug, Clone)]
pub(crate) struct ConversationForward {
    pub enc: model::EncoderForward,
    latest_mask: Vec<bool>,
    latest_mean: Vec<f64>,
    projected: Vec<f64>,
    pub weights: Vec<f64>,
    clamped: Vec<bool>,
    /// Weighted rows.
    pub weighted: Vec<f64>,
}

pub(crate) fn conversation_forward(tokens: &TokenizedText, params: &EncoderParams) -> Result<ConversationForward> {
    let d = params.dims().dim;
    let enc = model::forward(tokens, params)?;
    let source = match params.config.latest_mean {
        LatestMeanSource::Output => &enc.output,
        LatestMeanSource::PreNorm => &enc.pre_norm,
    };
    let s = latest_mean(source, d, &tokens.latest_mask)?;
    let ms = project_latest(params, &s);
    let (weights, clamped) = weights_from(&enc.output, &tokens.latest_mask, &ms, params.tensors.relevance_bias[0]);
    let mut weighted = enc.output.clone();
    for (row, w) in weighted.chunks_exact_mut(d).zip(&weights) {
        row.iter_mut().for_each(|v| *v *= w);
    }
    Ok(ConversationForward {
        enc,
        latest_mask: tokens.latest_mask.clone(),
        latest_mean: s,
        projected: ms,
        weights,
        clamped,
        weighted,
    })
}

/// Backpropagates `d_weighted` (gradient w.r.t. the weighted rows).
pub(crate) fn conversation_backward(
    fwd: &ConversationForward,
    params: &EncoderParams,
    d_weighted: &[f64],
    grads: &mut Tensors,
) {
    let d = params.dims().dim;
    let rows = &fwd.enc.output;
    let m = &params.tensors.relevance;
    let mut d_rows = vec![0.0; rows.len()];
    let mut d_mean = vec![0.0; d];
    for t in 0..fwd.enc.len {
        let h = &rows[t * d..(t + 1) * d];
        let g = &d_weighted[t * d..(t + 1) * d];
        let dh = &mut d_rows[t * d..(t + 1) * d];
        if fwd.latest_mask[t] {
            dh.copy_from_slice(g);
            continue;
        }
        let w = fwd.weights[t];
        let dw: f64 = g.iter().zip(h).map(|(a, b)| a * b).sum();
        let dlogit = if fwd.clamped[t] { 0.0 } else { dw * w * (1.0 - w) };
        for i in 0..d {
            dh[i] = w * g[i] + dlogit * fwd.projected[i];
        }
        if dlogit != 0.0 {
            grads.relevance_bias[0] += dlogit;
            for i in 0..d {
                let hi = h[i] * dlogit;
                for j in 0..d {
                    grads.relevance[i * d + j] += hi * fwd.latest_mean[j];
                    d_mean[j] += hi * m[i * d + j];
                }
            }
        }
    }
    let latest = fwd.latest_mask.iter().filter(|x| **x).count() as f64;
    let mut d_pre = None;
    let target = match params.config.latest_mean {
        LatestMeanSource::Output => &mut d_rows,
        LatestMeanSource::PreNorm => d_pre.insert(vec![0.0; rows.len()]),
    };
    for t in (0..fwd.enc.len).filter(|&t| fwd.latest_mask[t]) {
        for j in 0..d {
            target[t * d + j] += d_mean[j] / latest;
        }
    }
    model::backward(&fwd.enc, params, &d_rows, d_pre.as_deref(), grads);
}

/// Tokenizes and embeds `conversation`, returning the weighted rows and the
/// weights that produced them.
pub fn weighted_conversation_embedding(
    conversation: &Conversation,
    vocab: &Vocabulary,
    params: &EncoderParams,
) -> Result<(TokenEmbeddingMatrix, RelevanceWeights)> {
    let tokens = tokenize(conversation, vocab, params.dims().max_len)?;
    weighted_tokens_embedding(&tokens, params)
}

pub fn weighted_tokens_embedding(
    tokens: &TokenizedText,
    params: &EncoderParams,
) -> Result<(TokenEmbeddingMatrix, RelevanceWeights)> {
    let fwd = conversation_forward(tokens, params)?;
    Ok((
        TokenEmbeddingMatrix {
            dim: params.dims().dim,
            data: fwd.weighted,
            utterance_index: tokens.utterance_index.clone(),
            latest_mask: tokens.latest_mask.clone(),
        },
        RelevanceWeights {
            weights: fwd.weights,
        },
    ))
}

/// Embeds summary text (unweighted).
pub fn summary_embedding(text: &str, vocab: &Vocabulary, params: &EncoderParams) -> Result<TokenEmbeddingMatrix> {
    let tokens = tokenize_text(text, vocab, params.dims().max_len);
    if tokens.is_empty() {
        return Err(Error::Shape("summary has no tokens".into()));
    }
    encode_tokens(&tokens, params)
}
