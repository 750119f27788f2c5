// SPDX-License-Identifier: MIT OR Apache-2.0

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::histogram::Histogram;
use crate::lm::{derive_seed, sample, InterventionSpec, SampleMode, TransformerLm};
use crate::ppo::rollout::{scored_tokens, RewardModel};
use crate::scalar::Scalar;

pub const SENTIMENT_BUCKETS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalConfig {
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub samples_per_prompt: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            max_new_tokens: 8,
            temperature: 1.0,
            samples_per_prompt: 4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalSample {
    pub prompt: usize,
    pub response: Vec<usize>,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SentimentEval {
    pub mean: f64,
    pub samples: Vec<EvalSample>,
    /// 20 equal buckets over `[0, 1]`.
    pub histogram: Histogram,
}

/// Sample continuations of every prompt and score them. Sample `j` of
/// prompt `i` always uses the same seed, so two models (or one model with
/// and without an intervention) are compared on common random numbers.
pub fn evaluate_sentiment<T: Scalar, R: RewardModel>(
    model: &TransformerLm<T>,
    reward: &R,
    prompts: &[Vec<usize>],
    config: &EvalConfig,
    intervention: Option<&InterventionSpec>,
) -> Result<SentimentEval> {
    if prompts.is_empty() || config.samples_per_prompt == 0 {
        return Err(Error::InvalidArgument("evaluation needs prompts and at least one sample each".into()));
    }
    let mode = SampleMode::Temperature(config.temperature);
    let jobs: Vec<(usize, u64)> = (0..prompts.len())
        .flat_map(|i| {
            (0..config.samples_per_prompt).map(move |j| (i, (i * config.samples_per_prompt + j) as u64))
        })
        .collect();
    let samples: Vec<EvalSample> = jobs
        .par_iter()
        .map(|&(i, stream)| {
            let seed = derive_seed(config.seed, stream);
            let response = sample(model, &prompts[i], config.max_new_tokens, mode, seed, intervention)?;
            let score = reward.score(&scored_tokens(&prompts[i], &response))?;
            Ok(EvalSample { prompt: i, response, score })
        })
        .collect::<Result<_>>()?;
    let mean = samples.iter().map(|s| s.score).sum::<f64>() / samples.len() as f64;
    let histogram = Histogram::from_values(0.0, 1.0, SENTIMENT_BUCKETS, samples.iter().map(|s| s.score));
    Ok(SentimentEval { mean, samples, histogram })
}
