#![allow(dead_code)]

pub mod fd;

use conretrieve::corpus::{expand_corpus, AnnotatedExample, DialogueState, RawDialogue, RawTurn, Speaker};
use conretrieve::corpus::Conversation;
use conretrieve::encoder::{build_vocab, weighted_conversation_embedding, EncoderConfig, EncoderParams, ModelDims, Vocabulary};
use conretrieve::index::{EncoderContext, SupportIndex};
use conretrieve::summarizer::{Summary, SummaryCache};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WORDS: [&str; 24] = [
    "hotel", "taxi", "train", "north", "south", "cheap", "expensive", "book", "find", "museum", "park", "centre",
    "monday", "friday", "parking", "wifi", "italian", "chinese", "station", "airport", "guesthouse", "two", "three",
    "tonight",
];

pub fn sentence(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len).map(|_| *WORDS.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

/// Random dialogues with 1-3 user turns and a random summary per turn.
pub fn random_corpus(dialogues: usize, seed: u64) -> (Vec<AnnotatedExample>, SummaryCache) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raw = Vec::new();
    for d in 0..dialogues {
        let users = rng.random_range(1..=3);
        let mut turns = Vec::new();
        for u in 0..users {
            if u > 0 {
                let len = rng.random_range(2..6);
                turns.push(RawTurn {
                    speaker: Speaker::System,
                    text: sentence(&mut rng, len),
                    state: None,
                });
            }
            let mut state = DialogueState::new();
            state.insert("hotel-area", WORDS[rng.random_range(0..WORDS.len())]);
            let len = rng.random_range(2..8);
            turns.push(RawTurn {
                speaker: Speaker::User,
                text: sentence(&mut rng, len),
                state: Some(state),
            });
        }
        raw.push(RawDialogue {
            id: format!("rnd{d:04}"),
            domains: vec!["hotel".into()],
            turns,
        });
    }
    let examples = expand_corpus(&raw).unwrap();
    let mut cache = SummaryCache::in_memory();
    for e in &examples {
        let len = rng.random_range(3..9);
        cache.insert(Summary::new(e.conversation.id.clone(), e.turn_index, &sentence(&mut rng, len)).unwrap());
    }
    (examples, cache)
}

pub fn word_vocab() -> Vocabulary {
    let text = WORDS.join(" ");
    build_vocab([text.as_str()], 1).unwrap()
}

pub fn tiny_params(vocab: &Vocabulary, seed: u64) -> EncoderParams {
    let dims = ModelDims::with(vocab.len(), 16, 1, 2, 64);
    EncoderParams::init(EncoderConfig::new(dims), seed).unwrap()
}

/// Exhaustive scorer written against the stored f32 keys.
pub fn brute_force(index: &SupportIndex, conv: &Conversation, ctx: &EncoderContext, k: usize) -> Vec<(String, f64)> {
    let (q, _) = weighted_conversation_embedding(conv, ctx.vocab, ctx.params).unwrap();
    let d = q.dim;
    let mut scored: Vec<(usize, f64)> = index
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let rows = q.data.len() / d;
            let keys = e.key.data.len() / d;
            let mut total = 0.0;
            for r in 0..rows {
                let mut best = f64::NEG_INFINITY;
                for c in 0..keys {
                    let dot: f64 = (0..d).map(|j| q.data[r * d + j] * e.key.data[c * d + j] as f64).sum();
                    best = best.max(dot);
                }
                total += best;
            }
            (i, total / rows as f64)
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored
        .into_iter()
        .take(k)
        .map(|(i, s)| (index.entries[i].example.id(), s))
        .collect()
}

