//! Contrastive training of the conversation and summary encoders.

pub mod adamw;
pub mod loss;
pub mod similarity;
mod train;

pub use adamw::{adamw_step, adamw_update, clip_global_norm, AdamWConfig, AdamWState};
pub use loss::{batch_loss, contrastive_loss, encode_pairs, grad, pair_vocab, pairs_from_cache, BatchLoss, EncodedPair, TrainingPair};
pub use similarity::{maxsim_f32, maxsim_rows, similarity, MaxSim};
pub use train::{recall_at_1, train, EpochStats, Init, TrainConfig, TrainReport};
