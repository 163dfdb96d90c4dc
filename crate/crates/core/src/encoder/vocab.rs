use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const USR: u32 = 2;
pub const SYS: u32 = 3;
pub const SPECIALS: [&str; 4] = ["[PAD]", "[UNK]", "[USR]", "[SYS]"];

/// Splits lowercase text into word and punctuation tokens. Words are runs of
/// alphanumerics (an apostrophe inside a word is kept); every other
/// non-space character is a token of its own.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() || (ch == '\'' && !word.is_empty()) {
            word.push(ch);
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    min_count: usize,
    specials: Vec<String>,
}

/// Token to id map; specials take ids 0..4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    min_count: usize,
}

impl Vocabulary {
    fn from_kept(kept: Vec<String>, min_count: usize) -> Self {
        let tokens: Vec<String> = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(kept)
            .collect();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            tokens,
            index,
            min_count,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Non-special tokens in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[SPECIALS.len()..]
    }

    fn file(&self) -> VocabFile {
        VocabFile {
            tokens: self.words().to_vec(),
            min_count: self.min_count,
            specials: SPECIALS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.file()).expect("vocab serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("vocabulary: {e}")))?;
        if file.specials != SPECIALS {
            return Err(Error::Parse("vocabulary specials do not match [PAD] [UNK] [USR] [SYS]".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for t in &file.tokens {
            if SPECIALS.contains(&t.as_str()) || !seen.insert(t) {
                return Err(Error::Parse(format!("vocabulary token '{t}' is duplicated")));
            }
        }
        Ok(Self::from_kept(file.tokens, file.min_count))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Hex SHA-256 of the canonical (compact) vocabulary JSON.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.file()).expect("vocab serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Keeps tokens seen at least `min_count` times, ordered by count descending
/// then lexicographically.
pub fn build_vocab<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize) -> Result<Vocabulary> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut any = false;
    for text in texts {
        any = true;
        for w in split_words(text) {
            *counts.entry(w).or_default() += 1;
        }
    }
    if !any {
        return Err(Error::EmptyCorpus);
    }
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_count.max(1) && !SPECIALS.contains(&t.as_str()))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(Vocabulary::from_kept(
        kept.into_iter().map(|(t, _)| t).collect(),
        min_count,
    ))
}
