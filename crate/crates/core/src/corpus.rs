//! Annotated dialogue corpora: ingestion, per-turn expansion and holdout splits.
//!
//! The on-disk format is a JSON list of dialogues:
//!
//! ```text
//! [{"id": "d1", "domains": ["hotel"],
//!   "turns": [{"speaker": "user", "text": "...", "state": {"hotel-area": "north"}},
//!             {"speaker": "system", "text": "..."}]}]
//! ```
//!
//! `state` is required on user turns and forbidden on system turns.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    System,
}

impl Speaker {
    pub fn label(self) -> &'static str {
        match self {
            Speaker::User => "USER",
            Speaker::System => "SYSTEM",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: Speaker,
    pub text: String,
}

impl Utterance {
    /// Builds an utterance with normalized text. Fails on blank text.
    pub fn new(speaker: Speaker, text: &str) -> Result<Self> {
        let text = normalize_text(text);
        if text.is_empty() {
            return Err(Error::Parse("utterance text is empty".into()));
        }
        Ok(Self { speaker, text })
    }
}

/// An ordered list of utterances whose final utterance comes from the user.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

impl Conversation {
    pub fn new(id: impl Into<String>, utterances: Vec<Utterance>) -> Result<Self> {
        let id = id.into();
        match utterances.last() {
            None => Err(Error::Parse(format!("conversation '{id}' has no utterances"))),
            Some(u) if u.speaker != Speaker::User => Err(Error::Parse(format!(
                "conversation '{id}' must end with a user utterance"
            ))),
            Some(_) => Ok(Self { id, utterances }),
        }
    }

    /// Parses a transcript of `USER: ...` / `SYSTEM: ...` lines.
    pub fn from_transcript(id: impl Into<String>, transcript: &str) -> Result<Self> {
        let mut utterances = Vec::new();
        for line in transcript.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (speaker, rest) = match line.split_once(':') {
                Some((tag, rest)) if tag.trim().eq_ignore_ascii_case("user") => {
                    (Speaker::User, rest)
                }
                Some((tag, rest)) if tag.trim().eq_ignore_ascii_case("system") => {
                    (Speaker::System, rest)
                }
                _ => {
                    return Err(Error::Parse(format!(
                        "transcript line must start with USER: or SYSTEM: ({line:?})"
                    )))
                }
            };
            utterances.push(Utterance::new(speaker, rest)?);
        }
        Self::new(id, utterances)
    }

    pub fn latest(&self) -> &Utterance {
        // Non-empty by construction.
        self.utterances.last().expect("conversation is never empty")
    }

    /// `USER: ...` / `SYSTEM: ...` lines, one per utterance.
    pub fn transcript(&self) -> String {
        let mut out = String::new();
        for (i, u) in self.utterances.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(u.speaker.label());
            out.push_str(": ");
            out.push_str(&u.text);
        }
        out
    }
}

/// Accumulated `domain-slot -> value` map.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DialogueState {
    pub slots: BTreeMap<String, String>,
}

impl DialogueState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a slot after normalizing key and value. Empty values are ignored.
    pub fn insert(&mut self, key: &str, value: &str) {
        let key = normalize_text(key);
        let value = normalize_text(value);
        if !key.is_empty() && !value.is_empty() {
            self.slots.insert(key, value);
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.slots.get(key).map(String::as_str)
    }

    /// Slots that are new or whose value changed relative to `previous`.
    pub fn delta_from(&self, previous: &DialogueState) -> DialogueState {
        let slots = self
            .slots
            .iter()
            .filter(|(k, v)| previous.slots.get(*k) != Some(*v))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        DialogueState { slots }
    }

    /// Applies a delta on top of this state.
    pub fn accumulate(&self, delta: &DialogueState) -> DialogueState {
        let mut slots = self.slots.clone();
        for (k, v) in &delta.slots {
            slots.insert(k.clone(), v.clone());
        }
        DialogueState { slots }
    }

    /// Sorted `domain-slot=value` pairs joined by `"; "`.
    pub fn canonical(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for DialogueState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, v)) in self.slots.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

impl<K: AsRef<str>, V: AsRef<str>> FromIterator<(K, V)> for DialogueState {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        let mut state = DialogueState::new();
        for (k, v) in iter {
            state.insert(k.as_ref(), v.as_ref());
        }
        state
    }
}

/// One user turn of a dialogue with its conversation prefix and labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedExample {
    pub conversation: Conversation,
    /// 1-based index of the user turn that ends the prefix.
    pub turn_index: usize,
    pub state: DialogueState,
    pub state_delta: DialogueState,
    pub domain_tags: BTreeSet<String>,
}

impl AnnotatedExample {
    /// Stable identifier `<dialogue id>#<turn>`.
    pub fn id(&self) -> String {
        format!("{}#{}", self.conversation.id, self.turn_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTurn {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<DialogueState>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawDialogue {
    pub id: String,
    pub domains: Vec<String>,
    pub turns: Vec<RawTurn>,
}

impl RawDialogue {
    pub fn user_turns(&self) -> usize {
        self.turns
            .iter()
            .filter(|t| t.speaker == Speaker::User)
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusFormat {
    #[default]
    MultiWozJson,
}

/// Lowercases, collapses internal whitespace and trims.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Vec<RawDialogue>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        CorpusFormat::MultiWozJson => parse_corpus(&text),
    }
}

/// Parses and validates corpus JSON text.
pub fn parse_corpus(text: &str) -> Result<Vec<RawDialogue>> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let list = root
        .as_array()
        .ok_or_else(|| Error::Parse("corpus root must be a JSON list".into()))?;
    list.iter().enumerate().map(|(i, v)| parse_dialogue(i, v)).collect()
}

fn parse_dialogue(position: usize, value: &Value) -> Result<RawDialogue> {
    let schema = |dialogue: &str, field: String, reason: &str| Error::Schema {
        dialogue: dialogue.to_string(),
        field,
        reason: reason.to_string(),
    };
    let obj = value
        .as_object()
        .ok_or_else(|| schema(&format!("<#{position}>"), String::new(), "not an object"))?;
    let id = obj
        .get("id")
        .and_then(Value::as_str)
        .ok_or_else(|| schema(&format!("<#{position}>"), "id".into(), "missing string"))?
        .to_string();
    let domains = match obj.get("domains") {
        Some(Value::Array(items)) => items
            .iter()
            .enumerate()
            .map(|(i, d)| {
                d.as_str()
                    .map(normalize_text)
                    .ok_or_else(|| schema(&id, format!("domains[{i}]"), "expected string"))
            })
            .collect::<Result<Vec<_>>>()?,
        _ => return Err(schema(&id, "domains".into(), "missing list")),
    };
    let turns = obj
        .get("turns")
        .and_then(Value::as_array)
        .ok_or_else(|| schema(&id, "turns".into(), "missing list"))?;

    let mut parsed = Vec::with_capacity(turns.len());
    for (i, turn) in turns.iter().enumerate() {
        let field = |name: &str| format!("turns[{i}].{name}");
        let t = turn
            .as_object()
            .ok_or_else(|| schema(&id, format!("turns[{i}]"), "not an object"))?;
        let speaker = match t.get("speaker").and_then(Value::as_str) {
            Some("user") => Speaker::User,
            Some("system") => Speaker::System,
            Some(_) => return Err(schema(&id, field("speaker"), "must be \"user\" or \"system\"")),
            None => return Err(schema(&id, field("speaker"), "missing")),
        };
        let text = t
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| schema(&id, field("text"), "missing string"))?;
        let text = normalize_text(text);
        if text.is_empty() {
            return Err(schema(&id, field("text"), "empty after trimming"));
        }
        let state = match (speaker, t.get("state")) {
            (Speaker::System, Some(_)) => {
                return Err(schema(&id, field("state"), "forbidden on system turns"))
            }
            (Speaker::System, None) => None,
            (Speaker::User, None) => return Err(schema(&id, field("state"), "required on user turns")),
            (Speaker::User, Some(Value::Object(map))) => {
                let mut state = DialogueState::new();
                for (k, v) in map {
                    let v = v.as_str().ok_or_else(|| {
                        schema(&id, format!("turns[{i}].state.{k}"), "value must be a string")
                    })?;
                    if normalize_text(v).is_empty() {
                        return Err(schema(&id, format!("turns[{i}].state.{k}"), "empty value"));
                    }
                    state.insert(k, v);
                }
                Some(state)
            }
            (Speaker::User, Some(_)) => return Err(schema(&id, field("state"), "must be an object")),
        };
        parsed.push(RawTurn {
            speaker,
            text,
            state,
        });
    }
    Ok(RawDialogue {
        id,
        domains,
        turns: parsed,
    })
}

/// One example per user turn: the prefix ending at that turn, its accumulated
/// state and the delta against the previous user turn.
pub fn expand_turns(dialogue: &RawDialogue) -> Result<Vec<AnnotatedExample>> {
    let domain_tags: BTreeSet<String> = dialogue.domains.iter().cloned().collect();
    let mut examples = Vec::new();
    let mut prefix = Vec::new();
    let mut previous = DialogueState::new();
    for turn in &dialogue.turns {
        prefix.push(Utterance::new(turn.speaker, &turn.text)?);
        if turn.speaker != Speaker::User {
            continue;
        }
        let turn_index = examples.len() + 1;
        let state = turn.state.clone().ok_or_else(|| Error::MissingAnnotation {
            dialogue: dialogue.id.clone(),
            turn: turn_index,
        })?;
        let state_delta = state.delta_from(&previous);
        examples.push(AnnotatedExample {
            conversation: Conversation::new(dialogue.id.clone(), prefix.clone())?,
            turn_index,
            state: state.clone(),
            state_delta,
            domain_tags: domain_tags.clone(),
        });
        previous = state;
    }
    if examples.is_empty() {
        return Err(Error::MissingAnnotation {
            dialogue: dialogue.id.clone(),
            turn: 1,
        });
    }
    Ok(examples)
}

/// Expands every dialogue of a corpus.
pub fn expand_corpus(dialogues: &[RawDialogue]) -> Result<Vec<AnnotatedExample>> {
    let mut out = Vec::new();
    for d in dialogues {
        out.extend(expand_turns(d)?);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct HoldoutSplit {
    pub train: Vec<AnnotatedExample>,
    pub heldout: Vec<AnnotatedExample>,
    /// Set when no example carries the requested domain.
    pub unknown_domain: bool,
}

/// Partitions examples by membership of `holdout_domain` in their tags.
pub fn split_holdout(examples: &[AnnotatedExample], holdout_domain: &str) -> HoldoutSplit {
    let domain = normalize_text(holdout_domain);
    let (heldout, train): (Vec<_>, Vec<_>) = examples
        .iter()
        .cloned()
        .partition(|e| e.domain_tags.contains(&domain));
    let unknown_domain = heldout.is_empty();
    if unknown_domain {
        log::warn!("no example carries holdout domain '{domain}'");
    }
    HoldoutSplit {
        train,
        heldout,
        unknown_domain,
    }
}
