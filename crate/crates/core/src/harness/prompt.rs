//! In-context prompt assembly and state parsing for the downstream model.

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedExample, Conversation, DialogueState};
use crate::index::{RetrievalResult, SupportIndex};

pub const DEFAULT_INSTRUCTION: &str = "Track the dialogue state. After each conversation, write the slot values the user has specified so far as domain-slot=value pairs separated by \"; \", or none.";

pub const STATE_PREFIX: &str = "state:";
pub const EMPTY_STATE: &str = "none";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub instruction: String,
    pub exemplar_header: String,
    pub test_header: String,
    /// Maximum exemplars rendered.
    pub k: usize,
}

impl Default for PromptSpec {
    fn default() -> Self {
        Self {
            instruction: DEFAULT_INSTRUCTION.to_string(),
            exemplar_header: "[example]".to_string(),
            test_header: "[test]".to_string(),
            k: 5,
        }
    }
}

/// `"none"` for the empty state, the canonical string otherwise.
pub fn render_state(state: &DialogueState) -> String {
    if state.is_empty() {
        EMPTY_STATE.to_string()
    } else {
        state.canonical()
    }
}

/// Renders the retrieved exemplars around the test conversation.
pub fn assemble_prompt(spec: &PromptSpec, index: &SupportIndex, retrieved: &RetrievalResult, test: &Conversation) -> String {
    let exemplars: Vec<&AnnotatedExample> = retrieved.hits.iter().map(|h| &index.entries[h.entry].example).collect();
    render_prompt(spec, &exemplars, test)
}

/// Renders the instruction, then up to `spec.k` exemplars (given best first,
/// written least similar first) and the test conversation ending in
/// `state:`.
pub fn render_prompt(spec: &PromptSpec, exemplars: &[&AnnotatedExample], test: &Conversation) -> String {
    let mut out = String::new();
    out.push_str(&spec.instruction);
    out.push_str("\n\n");
    for e in exemplars.iter().take(spec.k).rev() {
        out.push_str(&spec.exemplar_header);
        out.push('\n');
        out.push_str(&e.conversation.transcript());
        out.push('\n');
        out.push_str(STATE_PREFIX);
        out.push(' ');
        out.push_str(&render_state(&e.state));
        out.push_str("\n\n");
    }
    out.push_str(&spec.test_header);
    out.push('\n');
    out.push_str(&test.transcript());
    out.push('\n');
    out.push_str(STATE_PREFIX);
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParsedState {
    pub state: DialogueState,
    /// Fragments dropped as unparseable.
    pub warnings: usize,
}

/// Reads `domain-slot=value` pairs separated by `;` from the first line.
/// Never fails: bad fragments are counted and skipped.
pub fn parse_state(completion: &str) -> ParsedState {
    let line = completion.trim_start().lines().next().unwrap_or("").trim();
    let line = line.strip_prefix(STATE_PREFIX).unwrap_or(line).trim();
    let mut parsed = ParsedState::default();
    if line.eq_ignore_ascii_case(EMPTY_STATE) {
        return parsed;
    }
    for fragment in line.split(';').map(str::trim).filter(|f| !f.is_empty()) {
        let pair = fragment
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .filter(|(k, v)| is_slot_key(k) && !v.is_empty());
        match pair {
            Some((k, v)) => parsed.state.insert(k, v),
            None => parsed.warnings += 1,
        }
    }
    parsed
}

fn is_slot_key(key: &str) -> bool {
    key.split_once('-')
        .is_some_and(|(domain, slot)| !domain.trim().is_empty() && !slot.trim().is_empty())
}
