// SPDX-License-Identifier: MIT OR Apache-2.0

//! The GPT-style language model: tokenizer, forward pass with residual
//! capture and coefficient interventions, sampling, and training.

pub mod intervention;
pub mod model;
pub mod sample;
pub mod tokenizer;
pub mod trace;
pub mod train;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use intervention::InterventionSpec;
pub use model::{ForwardOptions, ForwardVars, LmConfig, LmVars, TransformerLm};
pub use sample::{derive_seed, sample, SampleMode};
pub use tokenizer::Tokenizer;
pub use trace::{mlp_update_decomposition, Contribution, LayerTrace, ResidualTrace};
pub use train::{train_lm, LmTrainConfig, LmTrainReport};

/// Names the MLP neuron `index` of `layer`: its key vector (row of
/// `mlp_keys`) and value vector (row of `mlp_values`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ValueVectorId {
    pub layer: usize,
    pub index: usize,
}

impl ValueVectorId {
    pub fn new(layer: usize, index: usize) -> Self {
        Self { layer, index }
    }
}

impl fmt::Display for ValueVectorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}.{}", self.layer, self.index)
    }
}
