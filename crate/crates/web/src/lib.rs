//! In-browser demo. A small encoder is trained on the synthetic booking corpus
//! at start-up; the page then queries it.
//!
//! [`DemoModel`] holds the logic and is plain Rust so it can be tested natively;
//! [`Demo`] is the JavaScript-facing wrapper.

use conretrieve::corpus::{expand_corpus, AnnotatedExample, Conversation};
use conretrieve::encoder::{
    summary_embedding, tokenize, tokenize_text, weight_report, weighted_tokens_embedding, EncoderConfig,
    EncoderParams, ModelDims, Vocabulary,
};
use conretrieve::harness::render_state;
use conretrieve::index::{build_index, query, EncoderContext, SupportIndex};
use conretrieve::summarizer::{summarize_corpus, MockSummarizer, SummarizeOptions, SummaryCache};
use conretrieve::synthetic::dst_corpus;
use conretrieve::trainer::{encode_pairs, maxsim_rows, pair_vocab, pairs_from_cache, train, Init, TrainConfig};
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

type Result<T> = std::result::Result<T, String>;

fn text<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

#[derive(Debug, Clone, Copy)]
pub struct DemoConfig {
    pub dialogues: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            dialogues: 8,
            epochs: 12,
            seed: 1,
        }
    }
}

#[derive(Serialize)]
struct EpochLine {
    epoch: usize,
    loss: f64,
    accuracy: f64,
}

pub struct DemoModel {
    vocab: Vocabulary,
    params: EncoderParams,
    index: SupportIndex,
    epochs: Vec<EpochLine>,
}

impl DemoModel {
    pub fn new(config: DemoConfig) -> Result<Self> {
        let examples: Vec<AnnotatedExample> = expand_corpus(&dst_corpus(config.dialogues, config.seed)).map_err(text)?;
        let mut cache = SummaryCache::in_memory();
        let options = SummarizeOptions {
            jobs: 1,
            ..SummarizeOptions::default()
        };
        summarize_corpus(&examples, &MockSummarizer::new(), &mut cache, options).map_err(text)?;
        let pairs = pairs_from_cache(&examples, &cache).map_err(text)?;
        let vocab = pair_vocab(&pairs, 1).map_err(text)?;
        let dims = ModelDims::with(vocab.len(), 16, 1, 2, 64);
        let encoded = encode_pairs(&pairs, &vocab, dims.max_len).map_err(text)?;
        let train_config = TrainConfig {
            batch_size: 16,
            learning_rate: 1e-3,
            temperature: 0.05,
            epochs: config.epochs,
            seed: config.seed,
            ..TrainConfig::default()
        };
        let (params, report) =
            train(&encoded, &train_config, Init::Fresh(EncoderConfig::new(dims)), |_, _| Ok(())).map_err(text)?;
        let ctx = EncoderContext::new(&vocab, &params).map_err(text)?;
        let index = build_index(&examples, &cache, &ctx).map_err(text)?;
        let epochs = report
            .epochs
            .iter()
            .map(|e| EpochLine {
                epoch: e.epoch,
                loss: e.mean_loss,
                accuracy: e.accuracy,
            })
            .collect();
        Ok(Self {
            vocab,
            params,
            index,
            epochs,
        })
    }

    /// Training curve and index size.
    pub fn summary(&self) -> String {
        json!({ "entries": self.index.len(), "vocabulary": self.vocab.len(), "epochs": self.epochs }).to_string()
    }

    fn conversation(transcript: &str) -> Result<Conversation> {
        Conversation::from_transcript("query", transcript).map_err(text)
    }

    /// Top-`k` support entries with their summaries and annotated states.
    pub fn retrieve(&self, transcript: &str, k: usize) -> Result<String> {
        let conversation = Self::conversation(transcript)?;
        let ctx = EncoderContext::new(&self.vocab, &self.params).map_err(text)?;
        let result = query(&self.index, &conversation, &ctx, k).map_err(text)?;
        let hits: Vec<_> = result
            .hits
            .iter()
            .map(|h| {
                let entry = &self.index.entries[h.entry];
                json!({
                    "id": h.id,
                    "score": h.score,
                    "summary": entry.summary.text,
                    "state": render_state(&entry.example.state),
                    "transcript": entry.example.conversation.transcript(),
                })
            })
            .collect();
        Ok(serde_json::Value::from(hits).to_string())
    }

    /// Per-token relevance weights.
    pub fn inspect(&self, transcript: &str) -> Result<String> {
        let report = weight_report(&Self::conversation(transcript)?, &self.vocab, &self.params).map_err(text)?;
        serde_json::to_string(&report).map_err(text)
    }

    /// Similarity between a conversation and a free-text summary, with the
    /// summary token each conversation token aligns to.
    pub fn similarity(&self, transcript: &str, summary: &str) -> Result<String> {
        let conversation = Self::conversation(transcript)?;
        let tokens = tokenize(&conversation, &self.vocab, self.params.dims().max_len).map_err(text)?;
        let (weighted, weights) = weighted_tokens_embedding(&tokens, &self.params).map_err(text)?;
        let keys = summary_embedding(summary, &self.vocab, &self.params).map_err(text)?;
        let words = tokenize_text(summary, &self.vocab, self.params.dims().max_len).surface;
        let m = maxsim_rows(&weighted.data, &keys.data, keys.dim);
        let alignment: Vec<_> = tokens
            .surface
            .iter()
            .zip(&weights.weights)
            .zip(&m.argmax)
            .map(|((token, w), &j)| json!({ "token": token, "weight": w, "match": words[j] }))
            .collect();
        Ok(json!({ "score": m.score, "alignment": alignment }).to_string())
    }
}

#[wasm_bindgen]
pub struct Demo {
    model: DemoModel,
}

#[wasm_bindgen]
impl Demo {
    /// Trains the demo encoder. Takes a second or two.
    #[wasm_bindgen(constructor)]
    pub fn new(dialogues: usize, epochs: usize, seed: u64) -> std::result::Result<Demo, JsError> {
        let model = DemoModel::new(DemoConfig {
            dialogues,
            epochs,
            seed,
        })
        .map_err(|e| JsError::new(&e))?;
        Ok(Demo { model })
    }

    pub fn summary(&self) -> String {
        self.model.summary()
    }

    pub fn retrieve(&self, transcript: &str, k: usize) -> std::result::Result<String, JsError> {
        self.model.retrieve(transcript, k).map_err(|e| JsError::new(&e))
    }

    pub fn inspect(&self, transcript: &str) -> std::result::Result<String, JsError> {
        self.model.inspect(transcript).map_err(|e| JsError::new(&e))
    }

    pub fn similarity(&self, transcript: &str, summary: &str) -> std::result::Result<String, JsError> {
        self.model.similarity(transcript, summary).map_err(|e| JsError::new(&e))
    }
}
