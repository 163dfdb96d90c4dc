//! In-batch contrastive objective and its exact gradient.

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedExample, Conversation};
use crate::encoder::model::{self, EncoderForward};
use crate::encoder::{conversation_backward, conversation_forward, tokenize, tokenize_text, ConversationForward};
use crate::encoder::{build_vocab, EncoderParams, Tensors, TokenizedText, Vocabulary};
use crate::error::{Error, Result};
use crate::exec::par_map;
use crate::summarizer::{Summary, SummaryCache};

use super::similarity::maxsim_rows;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub conversation: Conversation,
    pub summary: Summary,
}

/// A training pair after tokenization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub conversation: TokenizedText,
    pub summary: TokenizedText,
}

/// Pairs every example with its cached summary.
pub fn pairs_from_cache(examples: &[AnnotatedExample], cache: &SummaryCache) -> Result<Vec<TrainingPair>> {
    examples
        .iter()
        .map(|e| {
            let summary = cache.get_example(e).ok_or_else(|| Error::MissingSummary(e.id()))?;
            Ok(TrainingPair {
                conversation: e.conversation.clone(),
                summary: summary.clone(),
            })
        })
        .collect()
}

/// Vocabulary over every utterance and summary of `pairs`.
pub fn pair_vocab(pairs: &[TrainingPair], min_count: usize) -> Result<Vocabulary> {
    build_vocab(
        pairs.iter().flat_map(|p| {
            p.conversation
                .utterances
                .iter()
                .map(|u| u.text.as_str())
                .chain(std::iter::once(p.summary.text.as_str()))
        }),
        min_count,
    )
}

pub fn encode_pairs(pairs: &[TrainingPair], vocab: &Vocabulary, max_len: usize) -> Result<Vec<EncodedPair>> {
    pairs
        .iter()
        .map(|p| {
            let summary = tokenize_text(&p.summary.text, vocab, max_len);
            if summary.is_empty() {
                return Err(Error::Shape(format!(
                    "summary of '{}' has no tokens",
                    p.conversation.id
                )));
            }
            Ok(EncodedPair {
                conversation: tokenize(&p.conversation, vocab, max_len)?,
                summary,
            })
        })
        .collect()
}

/// Mean over rows of `logsumexp_j(sim[i][j] / τ) − sim[i][i] / τ`, plus its
/// gradient with respect to every entry of the `b x b` similarity matrix.
pub fn contrastive_loss(sim: &[f64], b: usize, temperature: f64) -> Result<(f64, Vec<f64>)> {
    if b == 0 || sim.len() != b * b {
        return Err(Error::Shape(format!("similarity matrix of {} entries for batch {b}", sim.len())));
    }
    if sim.iter().any(|s| !s.is_finite()) || !(temperature > 0.0) {
        return Err(Error::NonFiniteLoss);
    }
    let mut loss = 0.0;
    let mut dsim = vec![0.0; b * b];
    for i in 0..b {
        let row = &sim[i * b..(i + 1) * b];
        let max = row.iter().map(|s| s / temperature).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|s| (s / temperature - max).exp()).sum();
        let lse = max + z.ln();
        loss += lse - row[i] / temperature;
        for j in 0..b {
            let p = (row[j] / temperature - lse).exp();
            let target = if i == j { 1.0 } else { 0.0 };
            dsim[i * b + j] = (p - target) / (temperature * b as f64);
        }
    }
    let loss = loss / b as f64;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok((loss, dsim))
}

/// Loss value and the `b x b` matrix of conversation-to-summary similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub loss: f64,
    pub batch: usize,
    pub sim: Vec<f64>,
}

impl BatchLoss {
    /// Rows whose diagonal entry is the row maximum.
    pub fn correct(&self) -> usize {
        let b = self.batch;
        (0..b)
            .filter(|&i| {
                let row = &self.sim[i * b..(i + 1) * b];
                row.iter().all(|s| *s <= row[i])
            })
            .count()
    }
}

struct Activations {
    convs: Vec<ConversationForward>,
    sums: Vec<EncoderForward>,
    /// `argmax[i * b + j][t]`: best summary row of pair `j` for conversation row `t` of pair `i`.
    argmax: Vec<Vec<usize>>,
    loss: BatchLoss,
}

fn activations(batch: &[EncodedPair], params: &EncoderParams) -> Result<Activations> {
    let b = batch.len();
    if b == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    let d = params.dims().dim;
    let convs = par_map(batch, |p| conversation_forward(&p.conversation, params))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let sums = par_map(batch, |p| model::forward(&p.summary, params))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<Vec<_>> = par_map(&convs, |c| {
        sums.iter()
            .map(|s| maxsim_rows(&c.weighted, &s.output, d))
            .collect()
    });
    let mut sim = Vec::with_capacity(b * b);
    let mut argmax = Vec::with_capacity(b * b);
    for m in rows.into_iter().flatten() {
        sim.push(m.score);
        argmax.push(m.argmax);
    }
    Ok(Activations {
        convs,
        sums,
        argmax,
        loss: BatchLoss {
            loss: f64::NAN,
            batch: b,
            sim,
        },
    })
}

/// Contrastive loss of a batch under `params`.
pub fn batch_loss(batch: &[EncodedPair], params: &EncoderParams, temperature: f64) -> Result<BatchLoss> {
    let mut act = activations(batch, params)?;
    let (loss, _) = contrastive_loss(&act.loss.sim, batch.len(), temperature)?;
    act.loss.loss = loss;
    Ok(act.loss)
}

/// Number of fixed-size groups gradient accumulation is split into; fixed so
/// the summation order does not depend on the thread count.
const GRAD_GROUPS: usize = 8;

enum Task<'a> {
    Conversation(&'a ConversationForward, Vec<f64>),
    Summary(&'a EncoderForward, Vec<f64>),
}

/// Loss and exact gradient with respect to every parameter tensor.
pub fn grad(batch: &[EncodedPair], params: &EncoderParams, temperature: f64) -> Result<(BatchLoss, Tensors)> {
    let b = batch.len();
    let d = params.dims().dim;
    let mut act = activations(batch, params)?;
    let (loss, dsim) = contrastive_loss(&act.loss.sim, b, temperature)?;
    act.loss.loss = loss;

    let mut d_conv: Vec<Vec<f64>> = act.convs.iter().map(|c| vec![0.0; c.weighted.len()]).collect();
    let mut d_sum: Vec<Vec<f64>> = act.sums.iter().map(|s| vec![0.0; s.output.len()]).collect();
    for i in 0..b {
        let conv = &act.convs[i];
        let t_len = conv.enc.len as f64;
        for j in 0..b {
            let g = dsim[i * b + j];
            if g == 0.0 {
                continue;
            }
            let scale = g / t_len;
            let keys = &act.sums[j].output;
            for (t, &a) in act.argmax[i * b + j].iter().enumerate() {
                let key = &keys[a * d..(a + 1) * d];
                let row = &conv.weighted[t * d..(t + 1) * d];
                for m in 0..d {
                    d_conv[i][t * d + m] += scale * key[m];
                    d_sum[j][a * d + m] += scale * row[m];
                }
            }
        }
    }

    let tasks: Vec<Task> = act
        .convs
        .iter()
        .zip(d_conv)
        .map(|(c, g)| Task::Conversation(c, g))
        .chain(act.sums.iter().zip(d_sum).map(|(s, g)| Task::Summary(s, g)))
        .collect();
    let group = tasks.len().div_ceil(GRAD_GROUPS).max(1);
    let chunks: Vec<&[Task]> = tasks.chunks(group).collect();
    let partials = par_map(&chunks, |chunk| {
        let mut g = Tensors::zeros(params.dims());
        for task in chunk.iter() {
            match task {
                Task::Conversation(c, dg) => conversation_backward(c, params, dg, &mut g),
                Task::Summary(s, dg) => model::backward(s, params, dg, None, &mut g),
            }
        }
        g
    });
    let mut total = Tensors::zeros(params.dims());
    for p in &partials {
        total.add_assign(p);
    }
    Ok((act.loss, total))
}
