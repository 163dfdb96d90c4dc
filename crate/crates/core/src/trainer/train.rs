use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{conversation_forward, encode_tokens, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::exec::par_map;

use super::adamw::{adamw_step, clip_global_norm, AdamWConfig, AdamWState};
use super::loss::{grad, EncodedPair};
use super::similarity::maxsim_rows;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip_norm: f64,
    pub temperature: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            learning_rate: 5e-5,
            epochs: 20,
            weight_decay: 0.01,
            seed: 0,
            clip_norm: 1.0,
            temperature: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Starting point for training.
#[derive(Debug, Clone)]
pub enum Init {
    /// Fresh parameters seeded with the training seed.
    Fresh(EncoderConfig),
    Params(EncoderParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Fraction of rows whose own summary scored highest within the batch.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub wall_time_secs: f64,
    pub checkpoint: Option<String>,
}

/// Trains on tokenized pairs. `on_epoch` receives the parameters after every
/// completed epoch (used to write checkpoints); training stops at the first
/// non-finite loss, so the last checkpoint written is the last good one.
pub fn train(
    pairs: &[EncodedPair],
    config: &TrainConfig,
    init: Init,
    mut on_epoch: impl FnMut(&EpochStats, &EncoderParams) -> Result<()>,
) -> Result<(EncoderParams, TrainReport)> {
    config.validate()?;
    let elapsed = stopwatch();
    let mut params = match init {
        Init::Fresh(cfg) => EncoderParams::init(cfg, config.seed)?,
        Init::Params(p) => p,
    };
    let mut report = TrainReport {
        epochs: Vec::new(),
        wall_time_secs: 0.0,
        checkpoint: None,
    };
    if config.epochs == 0 {
        return Ok((params, report));
    }
    if pairs.len() < 2 && config.batch_size != 1 {
        return Err(Error::InsufficientPairs(pairs.len()));
    }

    let opt = AdamWConfig::new(config.learning_rate, config.weight_decay);
    let mut state = AdamWState::new(&params.tensors);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..pairs.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut rows = 0usize;
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() == 1 && config.batch_size > 1 {
                continue;
            }
            let batch: Vec<EncodedPair> = chunk.iter().map(|&i| pairs[i].clone()).collect();
            let (loss, mut grads) = grad(&batch, &params, config.temperature)?;
            if !grads.all_finite() {
                return Err(Error::NonFiniteLoss);
            }
            clip_global_norm(&mut grads, config.clip_norm);
            adamw_step(&mut params, &grads, &mut state, &opt);
            loss_sum += loss.loss * chunk.len() as f64;
            rows += chunk.len();
            correct += loss.correct();
        }
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / rows.max(1) as f64,
            accuracy: correct as f64 / rows.max(1) as f64,
        };
        log::info!(
            "epoch {epoch}: loss {:.6} in-batch accuracy {:.3}",
            stats.mean_loss,
            stats.accuracy
        );
        on_epoch(&stats, &params)?;
        report.epochs.push(stats);
    }
    report.wall_time_secs = elapsed();
    Ok((params, report))
}

#[cfg(not(target_arch = "wasm32"))]
fn stopwatch() -> impl Fn() -> f64 {
    let start = std::time::Instant::now();
    move || start.elapsed().as_secs_f64()
}

// No monotonic clock on wasm32-unknown-unknown.
#[cfg(target_arch = "wasm32")]
fn stopwatch() -> impl Fn() -> f64 {
    || 0.0
}

/// Fraction of pairs whose own summary is the single best match among all
/// summaries of the set (ties go to the lower index).
pub fn recall_at_1(pairs: &[EncodedPair], params: &EncoderParams) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let d = params.dims().dim;
    let summaries = par_map(pairs, |p| encode_tokens(&p.summary, params))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let indexed: Vec<(usize, &EncodedPair)> = pairs.iter().enumerate().collect();
    let hits = par_map(&indexed, |(i, p)| -> Result<bool> {
        let conv = conversation_forward(&p.conversation, params)?;
        let scores: Vec<f64> = summaries
            .iter()
            .map(|s| maxsim_rows(&conv.weighted, &s.data, d).score)
            .collect();
        Ok(best_index(&scores) == *i)
    });
    let mut correct = 0usize;
    for hit in hits {
        correct += usize::from(hit?);
    }
    Ok(correct as f64 / pairs.len() as f64)
}

fn best_index(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}
