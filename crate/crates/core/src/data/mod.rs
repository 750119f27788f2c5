// SPDX-License-Identifier: MIT OR Apache-2.0

//! Synthetic corpus generation and the checkpoint container.

pub mod checkpoint;
pub mod corpus;

pub use checkpoint::{Checkpoint, CheckpointError};
pub use corpus::{generate_corpus, LabeledSentence, Sentiment, SyntheticCorpus, TemplateConfig};
