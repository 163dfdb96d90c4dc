//! Few-shot DST experiments: sample a support set, retrieve exemplars for
//! each test turn, prompt a downstream model and score its states.

mod backend;
pub mod metrics;
mod prompt;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{split_holdout, AnnotatedExample, DialogueState};
use crate::error::{Error, Result};
use crate::exec::{par_map, with_jobs};
use crate::index::{build_index, query, rerank_latest, EncoderContext};
use crate::summarizer::SummaryCache;

pub use backend::{DstBackend, EchoMock};
#[cfg(feature = "remote")]
pub use backend::RemoteDst;
pub use metrics::{jga, mean_std, slot_f1, SlotCounts};
pub use prompt::{
    assemble_prompt, parse_state, render_prompt, render_state, ParsedState, PromptSpec, DEFAULT_INSTRUCTION,
    EMPTY_STATE, STATE_PREFIX,
};

/// Seeded uniform sample without replacement. Examples are ordered by id
/// before shuffling, so the result does not depend on input order, and
/// smaller samples under one seed are prefixes of larger ones.
pub fn sample_support(examples: &[AnnotatedExample], size: usize, seed: u64) -> Result<Vec<AnnotatedExample>> {
    if size > examples.len() {
        return Err(Error::InsufficientExamples {
            requested: size,
            available: examples.len(),
        });
    }
    let mut order: Vec<&AnnotatedExample> = examples.iter().collect();
    order.sort_by(|a, b| {
        (a.conversation.id.as_str(), a.turn_index).cmp(&(b.conversation.id.as_str(), b.turn_index))
    });
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(order.into_iter().take(size).cloned().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub support_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub k: usize,
    /// First-stage pool for latest-utterance reranking; `None` disables it.
    pub rerank_pool: Option<usize>,
    /// Support from examples without this domain, test turns only with it.
    pub holdout_domain: Option<String>,
    /// Concurrent test turns.
    pub jobs: usize,
    pub prompt: PromptSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            support_sizes: vec![100],
            seeds: vec![1, 2, 3],
            k: 5,
            rerank_pool: None,
            holdout_domain: None,
            jobs: 4,
            prompt: PromptSpec::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.support_sizes.is_empty() || self.support_sizes.contains(&0) {
            return Err(Error::Config("support sizes must be non-empty and positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if let Some(pool) = self.rerank_pool {
            if pool < self.k {
                return Err(Error::Config(format!("rerank pool {pool} is smaller than k {}", self.k)));
            }
        }
        Ok(())
    }
}

/// Where test turns come from.
#[derive(Debug, Clone)]
pub enum TestSet {
    /// Evaluate on each sampled support set itself.
    Support,
    Fixed(Vec<AnnotatedExample>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub example_id: String,
    pub predicted: DialogueState,
    pub gold: DialogueState,
    pub retrieved: Vec<String>,
    pub parse_warnings: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub support_size: usize,
    pub seed: u64,
    pub jga: f64,
    pub slot_f1: f64,
    pub failures: usize,
    pub checkpoint_fingerprint: String,
    pub config: ExperimentConfig,
    pub records: Vec<TurnRecord>,
}

impl EvalReport {
    /// Recomputes (jga, slot F1) from the per-turn records.
    pub fn recompute(&self) -> Result<(f64, f64)> {
        let (p, g) = split_records(&self.records);
        Ok((jga(&p, &g)?, slot_f1(&p, &g)?))
    }
}

fn split_records(records: &[TurnRecord]) -> (Vec<DialogueState>, Vec<DialogueState>) {
    records.iter().map(|r| (r.predicted.clone(), r.gold.clone())).unzip()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub model: String,
    pub support_size: usize,
    pub seeds: usize,
    pub jga_mean: f64,
    pub jga_std: f64,
    pub f1_mean: f64,
    pub f1_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub reports: Vec<EvalReport>,
    pub aggregate: Vec<AggregateRow>,
}

/// Mean and population σ per support size, in the order sizes were run.
pub fn aggregate(reports: &[EvalReport]) -> Vec<AggregateRow> {
    let mut groups: Vec<(usize, String, Vec<&EvalReport>)> = Vec::new();
    for r in reports {
        match groups.iter_mut().find(|(s, m, _)| *s == r.support_size && *m == r.model) {
            Some(g) => g.2.push(r),
            None => groups.push((r.support_size, r.model.clone(), vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(support_size, model, rs)| {
            let (jga_mean, jga_std) = mean_std(&rs.iter().map(|r| r.jga).collect::<Vec<_>>());
            let (f1_mean, f1_std) = mean_std(&rs.iter().map(|r| r.slot_f1).collect::<Vec<_>>());
            AggregateRow {
                model,
                support_size,
                seeds: rs.len(),
                jga_mean,
                jga_std,
                f1_mean,
                f1_std,
            }
        })
        .collect()
}

/// Fixed-width summary table, one row per support size.
pub fn format_table(rows: &[AggregateRow]) -> String {
    let mut out = format!("{:<16} {:>7} {:>5} {:>17} {:>17}\n", "model", "support", "seeds", "jga", "f1");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<16} {:>7} {:>5} {:>17} {:>17}",
            r.model,
            r.support_size,
            r.seeds,
            format!("{:.4}±{:.4}", r.jga_mean, r.jga_std),
            format!("{:.4}±{:.4}", r.f1_mean, r.f1_std),
        );
    }
    out
}

/// Support pool and test set after applying the holdout domain, if any.
pub fn partition(
    examples: &[AnnotatedExample],
    test: TestSet,
    holdout_domain: Option<&str>,
) -> Result<(Vec<AnnotatedExample>, TestSet)> {
    let Some(domain) = holdout_domain else {
        return Ok((examples.to_vec(), test));
    };
    let split = split_holdout(examples, domain);
    let test = match test {
        TestSet::Fixed(t) => split_holdout(&t, domain).heldout,
        TestSet::Support => split.heldout,
    };
    if test.is_empty() {
        return Err(Error::InsufficientExamples {
            requested: 1,
            available: 0,
        });
    }
    Ok((split.train, TestSet::Fixed(test)))
}

/// Runs every (support size, seed) combination. Per-turn failures are
/// recorded and scored as empty predictions; a run where every turn fails
/// aborts the experiment.
pub fn run_experiment(
    examples: &[AnnotatedExample],
    test: TestSet,
    cache: &SummaryCache,
    ctx: &EncoderContext,
    backend: &dyn DstBackend,
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    config.validate()?;
    let (pool, test) = partition(examples, test, config.holdout_domain.as_deref())?;
    let mut reports = Vec::new();
    for &size in &config.support_sizes {
        for &seed in &config.seeds {
            let support = sample_support(&pool, size, seed)?;
            let index = build_index(&support, cache, ctx)?;
            let turns = match &test {
                TestSet::Support => &support,
                TestSet::Fixed(t) => t,
            };
            let records = with_jobs(config.jobs, || {
                par_map(turns, |example| {
                    let mut record = TurnRecord {
                        example_id: example.id(),
                        predicted: DialogueState::new(),
                        gold: example.state.clone(),
                        retrieved: Vec::new(),
                        parse_warnings: 0,
                        error: None,
                    };
                    let outcome = (|| -> Result<()> {
                        let conversation = &example.conversation;
                        let retrieved = match config.rerank_pool {
                            Some(pool) => rerank_latest(&index, conversation, ctx, pool, config.k)?,
                            None => query(&index, conversation, ctx, config.k)?,
                        };
                        record.retrieved = retrieved.hits.iter().map(|h| h.id.clone()).collect();
                        let prompt = assemble_prompt(&config.prompt, &index, &retrieved, conversation);
                        let parsed = parse_state(&backend.complete(&prompt)?);
                        record.predicted = parsed.state;
                        record.parse_warnings = parsed.warnings;
                        Ok(())
                    })();
                    if let Err(e) = outcome {
                        log::warn!("turn {} failed: {e}", record.example_id);
                        record.error = Some(e.to_string());
                    }
                    record
                })
            });
            let failures = records.iter().filter(|r| r.error.is_some()).count();
            if failures == records.len() {
                return Err(Error::SystemicBackendFailure(failures));
            }
            let (p, g) = split_records(&records);
            reports.push(EvalReport {
                model: backend.name(),
                support_size: size,
                seed,
                jga: jga(&p, &g)?,
                slot_f1: slot_f1(&p, &g)?,
                failures,
                checkpoint_fingerprint: ctx.fingerprint.clone(),
                config: config.clone(),
                records,
            });
        }
    }
    let aggregate = aggregate(&reports);
    Ok(ExperimentReport { reports, aggregate })
}
