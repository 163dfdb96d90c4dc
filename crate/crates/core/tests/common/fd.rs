//! Central finite differences against analytic gradients on a tiny model.

use conretrieve::corpus::Conversation;
use conretrieve::encoder::{build_vocab, EncoderConfig, EncoderParams, ModelDims};
use conretrieve::summarizer::Summary;
use conretrieve::trainer::{batch_loss, encode_pairs, grad, EncodedPair, TrainingPair};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 46] = [
    "taxi", "hotel", "train", "north", "south", "cheap", "museum", "park", "station", "centre",
    "book", "find", "table", "people", "night", "stars", "wifi", "parking", "leave", "arrive",
    "monday", "friday", "five", "seven", "pizza", "curry", "bridge", "college", "river", "east",
    "west", "expensive", "moderate", "pool", "guest", "house", "airport", "noon", "evening",
    "quiet", "garden", "theatre", "cinema", "gallery", "market", "harbour",
];

pub fn batch(seed: u64, b: usize) -> (Vec<EncodedPair>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pick = |n: usize| -> String {
        (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
    };
    let pairs: Vec<TrainingPair> = (0..b)
        .map(|i| {
            let transcript = format!("user: {}\nsystem: {}\nuser: {}", pick(4), pick(3), pick(3));
            TrainingPair {
                conversation: Conversation::from_transcript(format!("c{i}"), &transcript).unwrap(),
                summary: Summary::new(format!("c{i}"), 2, &pick(4)).unwrap(),
            }
        })
        .collect();
    let vocab = build_vocab(WORDS.iter().copied(), 1).unwrap();
    let encoded = encode_pairs(&pairs, &vocab, 32).unwrap();
    (encoded, vocab.len())
}

/// Gradients below this magnitude are compared in absolute terms; the
/// key-projection bias, for one, has an exactly zero true gradient.
pub const GRAD_FLOOR: f64 = 1e-6;

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(GRAD_FLOOR)
}

pub struct Sample {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
}

/// Two coordinates of every parameter tensor, d=8, one layer, two heads, B=4.
pub fn check(config_mut: impl Fn(&mut EncoderConfig), seed: u64) -> Vec<Sample> {
    let (pairs, v) = batch(seed, 4);
    let mut cfg = EncoderConfig::new(ModelDims::with(v, 8, 1, 2, 32));
    config_mut(&mut cfg);
    let mut params = EncoderParams::init(cfg, seed).unwrap();
    // Scale weights up from the 0.02 init so MaxSim margins are large compared
    // with the finite-difference step and no argmax flips inside ±eps.
    for (_, kind, t) in params.tensors.named_mut() {
        if kind.decays() {
            t.iter_mut().for_each(|x| *x *= 25.0);
        }
    }
    params.tensors.relevance_bias[0] = 0.3;
    let (_, analytic) = grad(&pairs, &params, 1.0).unwrap();

    let used_ids: Vec<usize> = pairs
        .iter()
        .flat_map(|p| p.conversation.ids.iter().chain(&p.summary.ids))
        .map(|&id| id as usize)
        .collect();
    let max_len = pairs.iter().map(|p| p.conversation.len().min(p.summary.len())).min().unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let eps = 1e-4;
    let names: Vec<String> = params.tensors.named().into_iter().map(|(n, _, _)| n).collect();
    let mut samples = Vec::new();
    for (ti, name) in names.iter().enumerate() {
        for _ in 0..2 {
            let len = params.tensors.named()[ti].2.len();
            let idx = match name.as_str() {
                "token_emb" => used_ids[rng.random_range(0..used_ids.len())] * 8 + rng.random_range(0..8),
                "pos_emb" => rng.random_range(0..max_len * 8),
                _ => rng.random_range(0..len),
            };
            let a = analytic.named()[ti].2[idx];
            let mut plus = params.clone();
            plus.tensors.named_mut()[ti].2[idx] += eps;
            let mut minus = params.clone();
            minus.tensors.named_mut()[ti].2[idx] -= eps;
            let lp = batch_loss(&pairs, &plus, 1.0).unwrap().loss;
            let lm = batch_loss(&pairs, &minus, 1.0).unwrap().loss;
            let numeric = (lp - lm) / (2.0 * eps);
            samples.push(Sample {
                tensor: name.clone(),
                index: idx,
                analytic: a,
                numeric,
                error: relative_error(a, numeric),
            });
        }
    }
    samples
}
