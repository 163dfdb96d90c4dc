//! Conversation retrieval for few-shot, in-context dialogue state tracking.
//!
//! Support dialogues are indexed under summaries of what the user wants; a
//! distilled conversation encoder embeds raw test dialogues into the same
//! token-vector space, so retrieval needs no summarization at query time.
//!
//! Pipeline: [`corpus`] → [`summarizer`] → [`trainer`] → [`index`] → [`harness`].

mod bytes;
pub mod corpus;
pub mod encoder;
pub mod error;
mod exec;
pub mod harness;
pub mod index;
pub mod llm;
pub mod retry;
pub mod summarizer;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
