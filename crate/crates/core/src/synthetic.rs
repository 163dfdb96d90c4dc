//! Synthetic corpora for offline runs, demos and tests.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Conversation, DialogueState, RawDialogue, RawTurn, Speaker, Utterance};
use crate::error::Result;
use crate::summarizer::Summary;
use crate::trainer::TrainingPair;

const SYLLABLES: [&str; 16] = [
    "ka", "zo", "ri", "mu", "te", "va", "lo", "ne", "shi", "po", "gu", "de", "fi", "ba", "xo", "yu",
];

/// A made-up word unique to `n`.
pub fn pseudo_word(n: usize) -> String {
    let mut word = String::new();
    let mut x = n;
    for _ in 0..3 {
        word.push_str(SYLLABLES[x % 16]);
        x /= 16;
    }
    word.push_str(SYLLABLES[(n * 7 + 3) % 16]);
    word
}

/// `n` conversation/summary pairs; pair `i` alone uses keywords `3i..3i+3`.
pub fn separable_pairs(n: usize) -> Result<Vec<TrainingPair>> {
    (0..n)
        .map(|i| {
            let k: Vec<String> = (0..3).map(|j| pseudo_word(3 * i + j)).collect();
            let id = format!("pair-{i:03}");
            let conversation = Conversation::new(
                id.clone(),
                vec![
                    Utterance::new(Speaker::User, &format!("hello , i need something about {}", k[0]))?,
                    Utterance::new(Speaker::System, "sure , tell me more")?,
                    Utterance::new(Speaker::User, &format!("{} and {} please", k[1], k[2]))?,
                ],
            )?;
            let summary = Summary::new(id, 2, &format!("The user wants {} {} {}.", k[0], k[1], k[2]))?;
            Ok(TrainingPair { conversation, summary })
        })
        .collect()
}

/// Per-domain slot and value for a search request and for a booking.
const SLOTS: [(&str, (&str, &str), (&str, &str)); 5] = [
    ("taxi", ("destination", "museum"), ("departure", "station")),
    ("hotel", ("area", "north"), ("pricerange", "cheap")),
    ("restaurant", ("food", "italian"), ("area", "centre")),
    ("train", ("destination", "cambridge"), ("day", "monday")),
    ("attraction", ("type", "park"), ("area", "west")),
];

const OPENERS: [&str; 6] = [
    "i need to",
    "hi , i would like to",
    "hello , can you help me",
    "i am looking to",
    "please help me",
    "hey , i want to",
];

const REPLIES: [&str; 4] = [
    "sure , anything else ?",
    "i found a few options . what else ?",
    "okay . can i help with something more ?",
    "done . is there more ?",
];

const CLOSERS: [&str; 3] = ["please", "for me", "so please"];

/// Two-turn task dialogues over the five booking domains.
///
/// Template `t` searches domain `t - 1` and then books domain `t`, always
/// with the same slot values, so every user turn's accumulated state is a
/// function of its mock summary. Fillers are mock stopwords and only vary
/// the surface text.
pub fn dst_corpus(dialogues_per_template: usize, seed: u64) -> Vec<RawDialogue> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 0..dialogues_per_template {
        for (t, &(domain_b, _, (slot_b, value_b))) in SLOTS.iter().enumerate() {
            let (domain_a, (slot_a, value_a), _) = SLOTS[(t + SLOTS.len() - 1) % SLOTS.len()];
            let mut first = DialogueState::new();
            first.insert(&format!("{domain_a}-{slot_a}"), value_a);
            let mut second = first.clone();
            second.insert(&format!("{domain_b}-{slot_b}"), value_b);
            let pick = |rng: &mut ChaCha8Rng, xs: &[&'static str]| *xs.choose(rng).expect("non-empty");
            let turns = vec![
                RawTurn {
                    speaker: Speaker::User,
                    text: format!(
                        "{} find a {domain_a} {value_a} {}",
                        pick(&mut rng, &OPENERS),
                        pick(&mut rng, &CLOSERS)
                    ),
                    state: Some(first),
                },
                RawTurn {
                    speaker: Speaker::System,
                    text: pick(&mut rng, &REPLIES).to_string(),
                    state: None,
                },
                RawTurn {
                    speaker: Speaker::User,
                    text: format!(
                        "{} book a {domain_b} {value_b} {}",
                        pick(&mut rng, &OPENERS),
                        pick(&mut rng, &CLOSERS)
                    ),
                    state: Some(second),
                },
            ];
            let mut domains = vec![domain_a.to_string(), domain_b.to_string()];
            domains.sort();
            out.push(RawDialogue {
                id: format!("syn-{seed}-{domain_b}-{i:03}"),
                domains,
                turns,
            });
        }
    }
    out
}
