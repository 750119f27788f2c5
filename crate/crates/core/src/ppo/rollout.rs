// SPDX-License-Identifier: MIT OR Apache-2.0

use rayon::prelude::*;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::lm::tokenizer::{BOS, EOS, PAD};
use crate::lm::{sample, ForwardOptions, LmVars, SampleMode, TransformerLm};
use crate::ppo::gae::{gae, normalize_advantages};
use crate::ppo::value::ValueHead;
use crate::ppo::PpoConfig;
use crate::reward::SentimentClassifier;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Scores a finished text (prompt plus response, specials removed).
pub trait RewardModel: Sync {
    fn score(&self, tokens: &[usize]) -> Result<f64>;
}

impl<T: Scalar> RewardModel for SentimentClassifier<T> {
    fn score(&self, tokens: &[usize]) -> Result<f64> {
        SentimentClassifier::score(self, tokens)
    }
}

/// One episode. Per-token vectors all have the response's length.
#[derive(Clone, Debug)]
pub struct Rollout<T> {
    /// Starts with BOS.
    pub prompt: Vec<usize>,
    pub response: Vec<usize>,
    pub old_logprobs: Vec<f64>,
    pub ref_logprobs: Vec<f64>,
    /// Final hidden state before each action, `|response| × d`.
    pub hidden: Tensor<T>,
    pub values: Vec<f64>,
    pub score: f64,
    pub rewards: Vec<f64>,
    /// Normalized across the batch.
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl<T> Rollout<T> {
    /// Sampled estimate of `KL(π ‖ π_ref)` for this sequence.
    pub fn kl(&self) -> f64 {
        self.old_logprobs.iter().zip(&self.ref_logprobs).map(|(a, b)| a - b).sum()
    }
}

#[derive(Clone, Debug)]
pub struct RolloutBatch<T> {
    pub rollouts: Vec<Rollout<T>>,
}

impl<T> RolloutBatch<T> {
    pub fn mean_score(&self) -> f64 {
        self.rollouts.iter().map(|r| r.score).sum::<f64>() / self.rollouts.len() as f64
    }

    pub fn mean_kl(&self) -> f64 {
        self.rollouts.iter().map(Rollout::kl).sum::<f64>() / self.rollouts.len() as f64
    }
}

/// Log-probabilities of `response` given `prompt` (`|response|` entries)
/// and the final hidden states that produced them.
pub fn response_logprobs<T: Scalar>(
    model: &TransformerLm<T>,
    tape: &mut Tape<'_, T>,
    vars: &LmVars,
    prompt: &[usize],
    response: &[usize],
) -> Result<(Var, Var)> {
    if prompt.is_empty() || response.is_empty() {
        return Err(Error::InvalidArgument("log-probs need a prompt and a response".into()));
    }
    let mut seq = prompt.to_vec();
    seq.extend_from_slice(&response[..response.len() - 1]);
    let out = model.forward_on_tape(tape, vars, &seq, &ForwardOptions::default())?;
    let start = prompt.len() - 1;
    let logits = tape.slice_rows(out.logits, start, response.len())?;
    let hidden = tape.slice_rows(out.hidden, start, response.len())?;
    let logp = tape.log_softmax(logits);
    let picked = tape.pick_cols(logp, response)?;
    Ok((picked, hidden))
}

fn eval_logprobs<T: Scalar>(
    model: &TransformerLm<T>,
    prompt: &[usize],
    response: &[usize],
) -> Result<(Vec<f64>, Tensor<T>)> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, false);
    let (lp, h) = response_logprobs(model, &mut tape, &vars, prompt, response)?;
    let lp = tape.value(lp).data().iter().map(|x| x.as_f64()).collect();
    Ok((lp, tape.value(h).clone()))
}

/// Tokens the reward model sees: prompt and response without specials.
pub fn scored_tokens(prompt: &[usize], response: &[usize]) -> Vec<usize> {
    let t: Vec<usize> = prompt
        .iter()
        .chain(response)
        .copied()
        .filter(|&t| t != BOS && t != EOS && t != PAD)
        .collect();
    if t.is_empty() {
        vec![PAD]
    } else {
        t
    }
}

/// Sample one response per prompt (prompt `i` uses `seeds[i]`), score it,
/// and fill in rewards, values and normalized GAE advantages.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollouts<T: Scalar, R: RewardModel>(
    policy: &TransformerLm<T>,
    reference: &TransformerLm<T>,
    value_head: &ValueHead<T>,
    reward: &R,
    prompts: &[Vec<usize>],
    seeds: &[u64],
    config: &PpoConfig,
) -> Result<RolloutBatch<T>> {
    if prompts.is_empty() || prompts.len() != seeds.len() {
        return Err(Error::InvalidArgument(format!(
            "rollouts need one seed per prompt, got {} prompts and {} seeds",
            prompts.len(),
            seeds.len()
        )));
    }
    let mode = SampleMode::Temperature(config.temperature);
    let mut rollouts: Vec<Rollout<T>> = prompts
        .par_iter()
        .zip(seeds)
        .map(|(prompt, &seed)| {
            let response = sample(policy, prompt, config.max_new_tokens, mode, seed, None)?;
            if response.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "prompt of {} tokens leaves no room to generate",
                    prompt.len()
                )));
            }
            let (old_logprobs, hidden) = eval_logprobs(policy, prompt, &response)?;
            let (ref_logprobs, _) = eval_logprobs(reference, prompt, &response)?;
            let values = value_head.predict(&hidden);
            let score = reward.score(&scored_tokens(prompt, &response))?;
            let mut rewards: Vec<f64> = old_logprobs
                .iter()
                .zip(&ref_logprobs)
                .map(|(o, r)| -config.kl_coef * (o - r))
                .collect();
            *rewards.last_mut().expect("non-empty response") += score;
            let (advantages, returns) = gae(&rewards, &values, config.gamma, config.gae_lambda)?;
            Ok(Rollout {
                prompt: prompt.clone(),
                response,
                old_logprobs,
                ref_logprobs,
                hidden,
                values,
                score,
                rewards,
                advantages,
                returns,
            })
        })
        .collect::<Result<_>>()?;
    let mut advs: Vec<Vec<f64>> = rollouts.iter_mut().map(|r| std::mem::take(&mut r.advantages)).collect();
    normalize_advantages(&mut advs);
    for (r, a) in rollouts.iter_mut().zip(advs) {
        r.advantages = a;
    }
    Ok(RolloutBatch { rollouts })
}
