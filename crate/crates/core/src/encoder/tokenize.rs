use crate::corpus::{Conversation, Speaker};
use crate::error::{Error, Result};

use super::vocab::{split_words, Vocabulary, SYS, USR};

/// Token ids with per-token speaker, utterance attribution and latest-utterance mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedText {
    pub ids: Vec<u32>,
    /// Surface form of each token (speaker markers render as `[USR]`/`[SYS]`).
    pub surface: Vec<String>,
    /// `None` for text without speaker turns (summaries).
    pub speakers: Vec<Option<Speaker>>,
    pub utterance_index: Vec<usize>,
    pub latest_mask: Vec<bool>,
}

impl TokenizedText {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn latest_count(&self) -> usize {
        self.latest_mask.iter().filter(|m| **m).count()
    }
}

/// Tokenizes a conversation, prefixing each utterance with its speaker marker.
/// When longer than `max_len` the oldest tokens are dropped; the latest
/// utterance is never truncated.
pub fn tokenize(conversation: &Conversation, vocab: &Vocabulary, max_len: usize) -> Result<TokenizedText> {
    let mut out = TokenizedText {
        ids: Vec::new(),
        surface: Vec::new(),
        speakers: Vec::new(),
        utterance_index: Vec::new(),
        latest_mask: Vec::new(),
    };
    let last = conversation.utterances.len() - 1;
    for (j, u) in conversation.utterances.iter().enumerate() {
        let (marker, name) = match u.speaker {
            Speaker::User => (USR, "[USR]"),
            Speaker::System => (SYS, "[SYS]"),
        };
        let words = split_words(&u.text);
        let ids = std::iter::once(marker).chain(words.iter().map(|w| vocab.id(w)));
        let surface = std::iter::once(name.to_string()).chain(words.iter().cloned());
        for (id, s) in ids.zip(surface) {
            out.ids.push(id);
            out.surface.push(s);
            out.speakers.push(Some(u.speaker));
            out.utterance_index.push(j);
            out.latest_mask.push(j == last);
        }
    }
    let latest = out.latest_count();
    if latest > max_len {
        return Err(Error::LatestUtteranceTooLong {
            tokens: latest,
            max_len,
        });
    }
    if out.len() > max_len {
        let drop = out.len() - max_len;
        out.ids.drain(..drop);
        out.surface.drain(..drop);
        out.speakers.drain(..drop);
        out.utterance_index.drain(..drop);
        out.latest_mask.drain(..drop);
    }
    Ok(out)
}

/// Tokenizes free text (a summary): no speaker markers, no latest mask,
/// truncated to the first `max_len` tokens.
pub fn tokenize_text(text: &str, vocab: &Vocabulary, max_len: usize) -> TokenizedText {
    let words: Vec<String> = split_words(text).into_iter().take(max_len).collect();
    let n = words.len();
    TokenizedText {
        ids: words.iter().map(|w| vocab.id(w)).collect(),
        surface: words,
        speakers: vec![None; n],
        utterance_index: vec![0; n],
        latest_mask: vec![false; n],
    }
}

/// Tokenizes only the final user utterance, as a one-utterance conversation.
pub fn tokenize_latest(conversation: &Conversation, vocab: &Vocabulary, max_len: usize) -> Result<TokenizedText> {
    let latest = Conversation {
        id: conversation.id.clone(),
        utterances: vec![conversation.latest().clone()],
    };
    tokenize(&latest, vocab, max_len)
}
