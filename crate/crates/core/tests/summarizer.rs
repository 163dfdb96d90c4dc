use std::sync::atomic::{AtomicUsize, Ordering};

use conretrieve::corpus::{expand_corpus, load_corpus, Conversation, CorpusFormat};
use conretrieve::retry::RetryPolicy;
use conretrieve::summarizer::{
    render_prompt, summarize, summarize_corpus, MockSummarizer, SummarizeOptions, SummarizerBackend, SummaryCache,
};
use conretrieve::{Error, Result};

const FIXTURE: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/multiwoz_small.json");

#[test]
fn prompt_matches_golden_file() {
    let golden = include_str!("fixtures/summary_prompt.golden.txt");
    let conv = Conversation::from_transcript(
        "g",
        "USER: I need a taxi to the museum\nSYSTEM: When do you want to leave?\nUSER: after 17:15",
    )
    .unwrap();
    assert_eq!(render_prompt(&conv), golden);
}

#[test]
fn mock_closing_turn() {
    let examples = expand_corpus(&load_corpus(FIXTURE, CorpusFormat::MultiWozJson).unwrap()).unwrap();
    let closing = examples.iter().find(|e| e.id() == "SNG0412.json#2").unwrap();
    let s = summarize(&closing.conversation, &MockSummarizer::new()).unwrap();
    assert_eq!(s.text, "The user wants nothing more");
    assert_eq!(s.turn_index, 2);
}

/// Fails on one conversation prefix, succeeds elsewhere.
struct FailOn {
    transcript: String,
    calls: AtomicUsize,
}

impl SummarizerBackend for FailOn {
    fn summarize(&self, conversation: &Conversation) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if conversation.transcript() == self.transcript {
            Err(Error::BackendUnavailable("injected".into()))
        } else {
            MockSummarizer::new().summarize(conversation)
        }
    }
}

fn serial() -> SummarizeOptions {
    SummarizeOptions {
        jobs: 1,
        retry: RetryPolicy::no_delay(3),
    }
}

#[test]
fn corpus_run_is_idempotent() {
    let examples = expand_corpus(&load_corpus(FIXTURE, CorpusFormat::MultiWozJson).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("summaries.jsonl");

    let mock = MockSummarizer::new();
    let mut cache = SummaryCache::open(&path).unwrap();
    let stats = summarize_corpus(&examples, &mock, &mut cache, SummarizeOptions::default()).unwrap();
    assert_eq!(stats.requested, examples.len());
    assert_eq!(cache.len(), examples.len());
    let first = std::fs::read(&path).unwrap();

    let again = MockSummarizer::new();
    let mut cache = SummaryCache::open(&path).unwrap();
    let stats = summarize_corpus(&examples, &again, &mut cache, SummarizeOptions::default()).unwrap();
    assert_eq!((stats.requested, stats.already_cached), (0, examples.len()));
    assert_eq!(again.calls(), 0);
    assert_eq!(std::fs::read(&path).unwrap(), first);
    assert_eq!(first.iter().filter(|b| **b == b'\n').count(), examples.len());
}

#[test]
fn failure_keeps_earlier_entries() {
    let examples = expand_corpus(&load_corpus(FIXTURE, CorpusFormat::MultiWozJson).unwrap()).unwrap();
    let five = &examples[..5];
    let first_bad = 2;
    let backend = FailOn {
        transcript: five[first_bad].conversation.transcript(),
        calls: AtomicUsize::new(0),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("partial.jsonl");
    let mut cache = SummaryCache::open(&path).unwrap();
    let err = summarize_corpus(five, &backend, &mut cache, serial()).unwrap_err();
    match err {
        Error::SummarizeFailed { id, source } => {
            assert_eq!(id, five[first_bad].id());
            assert!(matches!(*source, Error::BackendUnavailable(_)));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(backend.calls.load(Ordering::SeqCst), first_bad + 3);
    let reopened = SummaryCache::open(&path).unwrap();
    assert_eq!(reopened.len(), first_bad);
    for e in &five[..first_bad] {
        assert!(reopened.contains_example(e));
    }
}
