// SPDX-License-Identifier: MIT OR Apache-2.0

//! Static and dynamic analyses of a model: sentence representations, the
//! linear probe, value-vector ranking and vocabulary projection, the logit
//! lens, and checkpoint/activation diffs.

pub mod diff;
pub mod lens;
pub mod probe;
pub mod project;
pub mod rank;
pub mod represent;

pub use diff::{activation_diff, weight_diff, ActivationDelta, CosineHistogram, WeightDiff};
pub use lens::{logit_lens, LensTrack};
pub use probe::{train_probe, ProbeConfig, ProbeDirection};
pub use project::{project_values, VocabProjection};
pub use rank::{rank_negative_vectors, NegativeEntry, NegativeSet};
pub use represent::{labeled_representations, sentence_representation};
