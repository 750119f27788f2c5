// SPDX-License-Identifier: MIT OR Apache-2.0

//! PPO alignment of the LM against a frozen reward model.
//!
//! Each generated token is an action. The per-token reward is the KL
//! penalty `-β (log π - log π_ref)`; the reward model's score is added at
//! the last token. Advantages come from GAE over a linear value head on the
//! (detached) final hidden states.

pub mod anchor;
pub mod config;
pub mod eval;
pub mod gae;
pub mod rollout;
pub mod train;
pub mod value;

pub use anchor::AnchorRegularizer;
pub use config::PpoConfig;
pub use eval::{evaluate_sentiment, EvalConfig, SentimentEval};
pub use gae::{gae, normalize_advantages};
pub use rollout::{collect_rollouts, response_logprobs, RewardModel, Rollout, RolloutBatch};
pub use train::{policy_step, ppo_train, IterationMetrics, PolicyStep, PpoReport};
pub use value::ValueHead;
