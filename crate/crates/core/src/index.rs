//! Support-set index: summary embeddings as keys, annotated dialogues as values.
//!
//! File layout:
//!
//! ```text
//! "CIDX" | version u32 | header_len u32 | header JSON
//!        | per entry: json_len u32 | entry JSON | key tensor | latest tensor
//!        | SHA-256 of everything before
//! ```
//!
//! A tensor is `rows u32 | dim u32 | rows*dim f32 LE`.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bytes::{put_f32s, put_u32, seal, unseal, Reader};
use crate::corpus::{AnnotatedExample, Conversation};
use crate::encoder::checkpoint::fingerprint;
use crate::encoder::{
    encode_tokens, summary_embedding, tokenize_latest, weighted_conversation_embedding, EncoderParams,
    TokenEmbeddingMatrix, Vocabulary,
};
use crate::error::{Error, Result};
use crate::exec::par_map;
use crate::summarizer::{Summary, SummaryCache};
use crate::trainer::maxsim_f32;

pub const MAGIC: &[u8; 4] = b"CIDX";
pub const VERSION: u32 = 1;

/// Row-major `f32` token vectors as stored in the index.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredEmbedding {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl From<&TokenEmbeddingMatrix> for StoredEmbedding {
    fn from(m: &TokenEmbeddingMatrix) -> Self {
        Self {
            rows: m.rows(),
            dim: m.dim,
            data: m.to_f32(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub example: AnnotatedExample,
    pub summary: Summary,
    pub key: StoredEmbedding,
    /// Embedding of the entry's latest user utterance alone, for reranking.
    pub latest: StoredEmbedding,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexHeader {
    pub checkpoint_fingerprint: String,
    pub vocab_hash: String,
    pub dim: usize,
    pub normalize: bool,
    pub entry_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportIndex {
    pub header: IndexHeader,
    pub entries: Vec<IndexEntry>,
}

impl SupportIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Encoder parameters and vocabulary, with their content hashes.
pub struct EncoderContext<'a> {
    pub vocab: &'a Vocabulary,
    pub params: &'a EncoderParams,
    pub fingerprint: String,
    pub vocab_hash: String,
}

impl<'a> EncoderContext<'a> {
    pub fn new(vocab: &'a Vocabulary, params: &'a EncoderParams) -> Result<Self> {
        if vocab.len() != params.dims().vocab_size {
            return Err(Error::Shape(format!(
                "vocabulary has {} tokens but the checkpoint expects {}",
                vocab.len(),
                params.dims().vocab_size
            )));
        }
        Ok(Self {
            vocab,
            params,
            fingerprint: fingerprint(params),
            vocab_hash: vocab.hash(),
        })
    }

    fn latest_embedding(&self, conversation: &Conversation) -> Result<TokenEmbeddingMatrix> {
        let tokens = tokenize_latest(conversation, self.vocab, self.params.dims().max_len)?;
        encode_tokens(&tokens, self.params)
    }

    pub fn check(&self, index: &SupportIndex) -> Result<()> {
        if index.header.checkpoint_fingerprint != self.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: index.header.checkpoint_fingerprint.clone(),
                actual: self.fingerprint.clone(),
            });
        }
        if index.header.vocab_hash != self.vocab_hash {
            return Err(Error::FingerprintMismatch {
                expected: format!("vocabulary {}", index.header.vocab_hash),
                actual: format!("vocabulary {}", self.vocab_hash),
            });
        }
        Ok(())
    }
}

/// Encodes every support example's cached summary as its key.
pub fn build_index(examples: &[AnnotatedExample], cache: &SummaryCache, ctx: &EncoderContext) -> Result<SupportIndex> {
    if examples.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let summaries = examples
        .iter()
        .map(|e| cache.get_example(e).cloned().ok_or_else(|| Error::MissingSummary(e.id())))
        .collect::<Result<Vec<_>>>()?;
    let items: Vec<(&AnnotatedExample, Summary)> = examples.iter().zip(summaries).collect();
    let entries = par_map(&items, |(example, summary)| -> Result<IndexEntry> {
        let key = summary_embedding(&summary.text, ctx.vocab, ctx.params)?;
        let latest = ctx.latest_embedding(&example.conversation)?;
        Ok(IndexEntry {
            example: (*example).clone(),
            summary: summary.clone(),
            key: (&key).into(),
            latest: (&latest).into(),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(SupportIndex {
        header: IndexHeader {
            checkpoint_fingerprint: ctx.fingerprint.clone(),
            vocab_hash: ctx.vocab_hash.clone(),
            dim: ctx.params.dims().dim,
            normalize: ctx.params.config.normalize,
            entry_count: entries.len(),
        },
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    /// Position of the entry in the index.
    pub entry: usize,
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_id: String,
    pub hits: Vec<Hit>,
}

/// Scores of `query` rows against every entry key.
pub fn score_entries(index: &SupportIndex, query: &TokenEmbeddingMatrix) -> Vec<f64> {
    par_map(&index.entries, |e| maxsim_f32(&query.data, &e.key.data, e.key.dim))
}

/// Entry positions ordered by score descending, then insertion order.
fn rank(scores: &[(usize, f64)], k: usize) -> Vec<(usize, f64)> {
    let mut order = scores.to_vec();
    order.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    order.truncate(k);
    order
}

fn result(index: &SupportIndex, query_id: &str, ranked: Vec<(usize, f64)>) -> RetrievalResult {
    RetrievalResult {
        query_id: query_id.to_string(),
        hits: ranked
            .into_iter()
            .map(|(entry, score)| Hit {
                entry,
                id: index.entries[entry].example.id(),
                score,
            })
            .collect(),
    }
}

/// Top-`k` entries for a conversation, scored with its weighted embedding.
pub fn query(index: &SupportIndex, conversation: &Conversation, ctx: &EncoderContext, k: usize) -> Result<RetrievalResult> {
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    ctx.check(index)?;
    let (q, _) = weighted_conversation_embedding(conversation, ctx.vocab, ctx.params)?;
    let scores: Vec<(usize, f64)> = score_entries(index, &q).into_iter().enumerate().collect();
    Ok(result(index, &conversation.id, rank(&scores, k)))
}

/// Retrieves `pool_size` candidates, then reorders them by similarity of the
/// latest user utterances alone and keeps the top `k`.
pub fn rerank_latest(
    index: &SupportIndex,
    conversation: &Conversation,
    ctx: &EncoderContext,
    pool_size: usize,
    k: usize,
) -> Result<RetrievalResult> {
    if pool_size < k {
        return Err(Error::Config(format!("pool size {pool_size} is smaller than k {k}")));
    }
    let pool = query(index, conversation, ctx, pool_size)?;
    let latest = ctx.latest_embedding(conversation)?;
    let scores: Vec<(usize, f64)> = pool
        .hits
        .iter()
        .map(|h| {
            let e = &index.entries[h.entry].latest;
            (h.entry, maxsim_f32(&latest.data, &e.data, e.dim))
        })
        .collect();
    Ok(result(index, &conversation.id, rank(&scores, k)))
}

#[derive(Serialize, Deserialize)]
struct EntryRecord {
    example: AnnotatedExample,
    summary: Summary,
}

fn put_tensor(out: &mut Vec<u8>, t: &StoredEmbedding) {
    put_u32(out, t.rows as u32);
    put_u32(out, t.dim as u32);
    put_f32s(out, t.data.iter().copied());
}

fn read_tensor(r: &mut Reader) -> Result<StoredEmbedding> {
    let rows = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let data = r.f32s(rows * dim)?;
    Ok(StoredEmbedding { rows, dim, data })
}

pub fn to_bytes(index: &SupportIndex) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let header = to_json(&index.header)?;
    put_u32(&mut out, header.len() as u32);
    out.extend_from_slice(&header);
    for e in &index.entries {
        let record = EntryRecord {
            example: e.example.clone(),
            summary: e.summary.clone(),
        };
        let body = to_json(&record)?;
        put_u32(&mut out, body.len() as u32);
        out.extend_from_slice(&body);
        put_tensor(&mut out, &e.key);
        put_tensor(&mut out, &e.latest);
    }
    Ok(seal(out))
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    serde_json::to_vec(value).map_err(|e| Error::Parse(e.to_string()))
}

pub fn from_bytes(bytes: &[u8]) -> Result<SupportIndex> {
    let (rest, _) = unseal(bytes, MAGIC, "index", VERSION)?;
    let mut r = Reader::new(rest, "index");
    let n = r.u32()? as usize;
    let header: IndexHeader =
        serde_json::from_slice(r.take(n)?).map_err(|e| Error::Parse(format!("index header: {e}")))?;
    let mut entries = Vec::with_capacity(header.entry_count);
    for _ in 0..header.entry_count {
        let n = r.u32()? as usize;
        let record: EntryRecord =
            serde_json::from_slice(r.take(n)?).map_err(|e| Error::Parse(format!("index entry: {e}")))?;
        let key = read_tensor(&mut r)?;
        let latest = read_tensor(&mut r)?;
        if key.dim != header.dim || latest.dim != header.dim {
            return Err(Error::DimensionMismatch {
                left: key.dim,
                right: header.dim,
            });
        }
        entries.push(IndexEntry {
            example: record.example,
            summary: record.summary,
            key,
            latest,
        });
    }
    if !r.is_empty() {
        return Err(Error::Shape("index has trailing bytes".into()));
    }
    Ok(SupportIndex { header, entries })
}

pub fn save_index(index: &SupportIndex, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(index)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_index(path: impl AsRef<Path>) -> Result<SupportIndex> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
