//! Per-turn conversation summaries: prompt, backends, cache and batch driver.

mod cache;
mod mock;
mod prompt;

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedExample, Conversation, Speaker};
use crate::error::{Error, Result};
use crate::retry::RetryPolicy;

pub use cache::SummaryCache;
pub use mock::{MockSummarizer, DOMAINS, NOTHING_MORE};
pub use prompt::{render_prompt, QUESTION};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub conversation_id: String,
    pub turn_index: usize,
    #[serde(rename = "summary")]
    pub text: String,
}

impl Summary {
    /// Collapses the text to a single trimmed line; blank text is rejected.
    pub fn new(conversation_id: impl Into<String>, turn_index: usize, text: &str) -> Result<Self> {
        let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
        if text.is_empty() {
            return Err(Error::EmptyCompletion);
        }
        Ok(Self {
            conversation_id: conversation_id.into(),
            turn_index,
            text,
        })
    }
}

pub trait SummarizerBackend: Send + Sync {
    /// Returns raw summary text for a conversation ending with a user turn.
    fn summarize(&self, conversation: &Conversation) -> Result<String>;
}

impl<T: SummarizerBackend + ?Sized> SummarizerBackend for &T {
    fn summarize(&self, conversation: &Conversation) -> Result<String> {
        (**self).summarize(conversation)
    }
}

/// Remote chat model fed with [`render_prompt`].
#[cfg(feature = "remote")]
pub struct RemoteSummarizer {
    client: crate::llm::ChatClient,
}

#[cfg(feature = "remote")]
impl RemoteSummarizer {
    pub fn new(config: crate::llm::ChatConfig) -> Result<Self> {
        Ok(Self {
            client: crate::llm::ChatClient::new(config)?,
        })
    }
}

#[cfg(feature = "remote")]
impl SummarizerBackend for RemoteSummarizer {
    fn summarize(&self, conversation: &Conversation) -> Result<String> {
        self.client.complete(&render_prompt(conversation))
    }
}

/// Summarizes one conversation. The turn index is the number of user turns.
pub fn summarize(conversation: &Conversation, backend: &dyn SummarizerBackend) -> Result<Summary> {
    if conversation.latest().speaker != Speaker::User {
        return Err(Error::Parse("conversation must end with a user turn".into()));
    }
    let turn_index = conversation
        .utterances
        .iter()
        .filter(|u| u.speaker == Speaker::User)
        .count();
    let text = backend.summarize(conversation)?;
    Summary::new(conversation.id.clone(), turn_index, &text)
}

#[derive(Debug, Clone, Copy)]
pub struct SummarizeOptions {
    /// Maximum concurrent backend requests.
    pub jobs: usize,
    pub retry: RetryPolicy,
}

impl Default for SummarizeOptions {
    fn default() -> Self {
        Self {
            jobs: 4,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SummarizeStats {
    pub requested: usize,
    pub already_cached: usize,
}

/// Ensures every example has a cached summary. Each completion is appended to
/// the cache file as it arrives; on success the file is rewritten in key order.
/// On a persistent failure no new work is started, the cache file stays valid
/// and the error names the failing example.
pub fn summarize_corpus(
    examples: &[AnnotatedExample],
    backend: &dyn SummarizerBackend,
    cache: &mut SummaryCache,
    options: SummarizeOptions,
) -> Result<SummarizeStats> {
    let mut seen = std::collections::BTreeSet::new();
    let todo: Vec<&AnnotatedExample> = examples
        .iter()
        .filter(|e| !cache.contains_example(e))
        .filter(|e| seen.insert((e.conversation.id.clone(), e.turn_index)))
        .collect();
    let already_cached = examples.len() - todo.len();

    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let failures: Mutex<Vec<(usize, String, Error)>> = Mutex::new(Vec::new());
    let shared = Mutex::new(&mut *cache);
    let workers = options.jobs.clamp(1, todo.len().max(1));

    let work = || loop {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(example) = todo.get(i) else { break };
        let outcome = options
            .retry
            .run(|| summarize(&example.conversation, backend))
            .and_then(|mut s| {
                s.turn_index = example.turn_index;
                shared.lock().expect("cache lock").insert_persisted(s)
            });
        if let Err(e) = outcome {
            stop.store(true, Ordering::SeqCst);
            failures.lock().expect("failure lock").push((i, example.id(), e));
        }
    };
    // A single worker runs inline, which also keeps this usable without threads.
    if workers == 1 {
        work();
    } else {
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(work);
            }
        });
    }

    let mut failures = failures.into_inner().expect("failure lock");
    cache.save()?;
    failures.sort_by_key(|(i, _, _)| *i);
    if let Some((_, id, source)) = failures.into_iter().next() {
        return Err(Error::SummarizeFailed {
            id,
            source: Box::new(source),
        });
    }
    Ok(SummarizeStats {
        requested: todo.len(),
        already_cached,
    })
}
