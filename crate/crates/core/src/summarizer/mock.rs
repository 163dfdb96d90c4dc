//! Deterministic rule-based summarizer used for offline runs and tests.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::corpus::{Conversation, Speaker};
use crate::encoder::vocab::split_words;
use crate::error::Result;

use super::SummarizerBackend;

pub const NOTHING_MORE: &str = "The user wants nothing more";

pub const DOMAINS: [&str; 5] = ["taxi", "hotel", "restaurant", "train", "attraction"];

const BOOK_WORDS: [&str; 3] = ["book", "reserve", "booking"];

const CLOSING_WORDS: [&str; 6] = ["thanks", "thank", "goodbye", "bye", "cheers", "all"];

const STOPWORDS: &[&str] = &[
    "a", "about", "also", "am", "an", "and", "any", "anything", "are", "as", "at", "be", "but",
    "by", "can", "could", "do", "does", "else", "for", "from", "get", "go", "going", "good",
    "great", "have", "hello", "help", "hey", "hi", "how", "i", "i'm", "in", "is", "it", "just",
    "like", "looking", "me", "my", "need", "no", "not", "of", "ok", "okay", "on", "one", "or",
    "please", "s", "should", "so", "some", "something", "sure", "that", "that's", "the", "then",
    "there", "this", "to", "want", "wants", "we", "what", "when", "where", "which", "will",
    "with", "would", "yes", "you", "your",
];

/// Template summarizer: finds the active domain and request verb among the
/// user's utterances (latest first) and counts the distinct content words of
/// the latest user utterance, producing
/// `The user wants to <verb> a <domain> with <N> specified constraints.`
/// Closing turns and turns with no domain map to [`NOTHING_MORE`].
#[derive(Debug, Default)]
pub struct MockSummarizer {
    calls: AtomicUsize,
}

impl MockSummarizer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of summaries produced so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn summarize_text(conversation: &Conversation) -> String {
        let user_turns: Vec<Vec<String>> = conversation
            .utterances
            .iter()
            .rev()
            .filter(|u| u.speaker == Speaker::User)
            .map(|u| split_words(&u.text).into_iter().filter(|w| is_word(w)).collect())
            .collect();
        let latest = &user_turns[0];

        let mentions_domain = |words: &[String]| {
            words
                .iter()
                .find_map(|w| DOMAINS.iter().find(|d| **d == w.as_str()).copied())
        };
        let closing = latest.iter().any(|w| CLOSING_WORDS.contains(&w.as_str()));
        if closing && mentions_domain(latest).is_none() {
            return NOTHING_MORE.to_string();
        }
        let Some(domain) = user_turns.iter().find_map(|w| mentions_domain(w)) else {
            return NOTHING_MORE.to_string();
        };
        let verb = if user_turns
            .iter()
            .flatten()
            .any(|w| BOOK_WORDS.contains(&w.as_str()))
        {
            "book"
        } else {
            "find"
        };
        let constraints: BTreeSet<&str> = latest
            .iter()
            .map(String::as_str)
            .filter(|w| {
                !STOPWORDS.contains(w)
                    && !DOMAINS.contains(w)
                    && !BOOK_WORDS.contains(w)
                    && !CLOSING_WORDS.contains(w)
                    && *w != "find"
            })
            .collect();
        format!(
            "The user wants to {verb} a {domain} with {} specified constraints.",
            constraints.len()
        )
    }
}

fn is_word(token: &str) -> bool {
    token.chars().any(char::is_alphanumeric)
}

impl SummarizerBackend for MockSummarizer {
    fn summarize(&self, conversation: &Conversation) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(Self::summarize_text(conversation))
    }
}
