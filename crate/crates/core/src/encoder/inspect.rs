//! Token-weight reports for heat-map rendering.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, Speaker};
use crate::error::{Error, Result};

use super::{conversation_forward, tokenize, EncoderParams, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenWeight {
    pub token: String,
    pub utterance_index: usize,
    pub speaker: Option<Speaker>,
    pub latest: bool,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightReport {
    pub conversation_id: String,
    pub tokens: Vec<TokenWeight>,
}

/// Computes per-token relevance weights without writing anywhere.
pub fn weight_report(conversation: &Conversation, vocab: &Vocabulary, params: &EncoderParams) -> Result<WeightReport> {
    let tokens = tokenize(conversation, vocab, params.dims().max_len)?;
    let fwd = conversation_forward(&tokens, params)?;
    let rows = tokens
        .surface
        .iter()
        .zip(&tokens.utterance_index)
        .zip(&tokens.speakers)
        .zip(&tokens.latest_mask)
        .zip(&fwd.weights)
        .map(|((((token, &utterance_index), &speaker), &latest), &weight)| TokenWeight {
            token: token.clone(),
            utterance_index,
            speaker,
            latest,
            weight,
        })
        .collect();
    Ok(WeightReport {
        conversation_id: conversation.id.clone(),
        tokens: rows,
    })
}

/// Writes the weight report as pretty JSON to `sink`.
pub fn dump_weights(
    conversation: &Conversation,
    vocab: &Vocabulary,
    params: &EncoderParams,
    mut sink: impl Write,
) -> Result<WeightReport> {
    let report = weight_report(conversation, vocab, params)?;
    serde_json::to_writer_pretty(&mut sink, &report).map_err(|e| Error::Parse(e.to_string()))?;
    sink.write_all(b"\n")?;
    Ok(report)
}
