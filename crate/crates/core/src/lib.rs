// SPDX-License-Identifier: MIT OR Apache-2.0

//! Value-vector interpretability of PPO alignment on a small GPT-style
//! model.
//!
//! The crate trains a toy decoder LM on a synthetic polar-sentiment corpus,
//! finds the MLP value vectors most aligned with a linear probe's negative
//! direction, aligns the LM toward positive sentiment with PPO against a
//! frozen classifier, and measures what changed: weights, coefficients and
//! logit-lens trajectories. Scaling the coefficients of the negative value
//! vectors undoes the alignment; an anchor regularizer pays the policy to
//! move those vectors during PPO.
//!
//! All numeric code is generic over [`Scalar`]; the aliases below fix the
//! `f32` types used for training and the `f64` types used in gradient
//! checks.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod histogram;
pub mod interpret;
pub mod kv;
pub mod lm;
pub mod ppo;
pub mod reward;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use lm::ValueVectorId;
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Lm = lm::TransformerLm<f32>;
pub type Lm64 = lm::TransformerLm<f64>;
