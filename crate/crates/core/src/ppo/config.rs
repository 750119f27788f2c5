// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// PPO hyperparameters. Stored on disk as a `key=value` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub iterations: usize,
    /// Rollouts per iteration.
    pub batch_size: usize,
    pub minibatch_size: usize,
    /// Optimization passes over each rollout batch.
    pub epochs: usize,
    pub clip_eps: f64,
    /// β in the per-token KL penalty.
    pub kl_coef: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub max_new_tokens: usize,
    pub temperature: f64,
    /// Weight of the anchor term; 0 disables it.
    pub lambda2: f64,
    /// Per-vector cap δ_max on the anchor distance.
    pub anchor_cap: f64,
    /// Mean per-sequence KL above which training stops as diverged.
    pub kl_ceiling: f64,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            iterations: 2,
            batch_size: 64,
            minibatch_size: 64,
            epochs: 4,
            clip_eps: 0.2,
            kl_coef: 0.05,
            gamma: 1.0,
            gae_lambda: 0.95,
            policy_lr: 1e-4,
            value_lr: 1e-2,
            max_new_tokens: 8,
            temperature: 1.0,
            lambda2: 0.0,
            anchor_cap: 1.0,
            kl_ceiling: 10.0,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("ppo: {what}")));
        if self.batch_size == 0 || self.minibatch_size == 0 || self.minibatch_size > self.batch_size {
            return bad("need 1 <= minibatch_size <= batch_size");
        }
        if self.epochs == 0 || self.max_new_tokens == 0 {
            return bad("epochs and max_new_tokens must be positive");
        }
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps must be positive");
        }
        if !(self.kl_coef >= 0.0) || !(self.lambda2 >= 0.0) {
            return bad("kl_coef and lambda2 must be non-negative");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("need 0 < gamma <= 1 and 0 <= gae_lambda <= 1");
        }
        if !(self.policy_lr > 0.0) || !(self.value_lr > 0.0) || !(self.temperature > 0.0) {
            return bad("learning rates and temperature must be positive");
        }
        if !(self.anchor_cap > 0.0) || !(self.kl_ceiling > 0.0) {
            return bad("anchor_cap and kl_ceiling must be positive");
        }
        Ok(())
    }
}
