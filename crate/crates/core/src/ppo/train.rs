// SPDX-License-Identifier: MIT OR Apache-2.0

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Adam, AdamConfig, Tape};
use crate::error::{Error, Result};
use crate::lm::{derive_seed, TransformerLm};
use crate::ppo::anchor::AnchorRegularizer;
use crate::ppo::rollout::{collect_rollouts, response_logprobs, RewardModel, RolloutBatch};
use crate::ppo::value::ValueHead;
use crate::ppo::PpoConfig;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub mean_reward: f64,
    pub mean_kl: f64,
    pub clip_fraction: f64,
    pub anchor_distance_mean: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PpoReport {
    pub metrics: Vec<IterationMetrics>,
}

/// Loss and gradients of one minibatch update.
#[derive(Clone, Debug)]
pub struct PolicyStep<T> {
    pub loss: f64,
    pub clip_fraction: f64,
    /// In `named_tensors` order.
    pub grads: Vec<Option<Tensor<T>>>,
}

/// Clipped-surrogate loss (plus the anchor term, if any) on the rollouts
/// `indices` of `batch`, differentiated with respect to every policy
/// tensor.
pub fn policy_step<T: Scalar>(
    policy: &TransformerLm<T>,
    batch: &RolloutBatch<T>,
    indices: &[usize],
    clip_eps: f64,
    anchor: Option<&AnchorRegularizer<T>>,
) -> Result<PolicyStep<T>> {
    let mut tape = Tape::new();
    let vars = policy.bind(&mut tape, true);
    let mut parts = Vec::with_capacity(indices.len());
    let mut old = Vec::new();
    let mut adv = Vec::new();
    for &i in indices {
        let r = batch
            .rollouts
            .get(i)
            .ok_or_else(|| Error::Index(format!("rollout {i} out of range")))?;
        let (lp, _) = response_logprobs(policy, &mut tape, &vars, &r.prompt, &r.response)?;
        parts.push(lp);
        old.extend(r.old_logprobs.iter().map(|&x| T::of(x)));
        adv.extend(r.advantages.iter().map(|&x| T::of(x)));
    }
    let logp = tape.concat(&parts)?;
    let clipped = tape
        .value(logp)
        .data()
        .iter()
        .zip(&old)
        .filter(|(&lp, &o)| ((lp - o).exp().as_f64() - 1.0).abs() > clip_eps)
        .count();
    let mut loss = tape.clipped_surrogate(logp, &old, &adv, T::of(clip_eps))?;
    if let Some(term) = anchor.map(|a| a.loss_term(&mut tape, &vars)).transpose()?.flatten() {
        loss = tape.add(loss, term)?;
    }
    let value = tape.value(loss).item().as_f64();
    let g = tape.backward(loss)?;
    Ok(PolicyStep {
        loss: value,
        clip_fraction: clipped as f64 / old.len() as f64,
        grads: vars.all().iter().map(|v| g.get(*v).cloned()).collect(),
    })
}

/// Run PPO on `policy` against the frozen `reference` and `reward`.
/// `anchor`, when given, is tracked in the metrics and, if its λ₂ is
/// non-zero, added to the loss. `on_iteration` runs after every
/// iteration (for logging and checkpoints).
#[allow(clippy::too_many_arguments)]
pub fn ppo_train<T: Scalar, R: RewardModel>(
    policy: &mut TransformerLm<T>,
    reference: &TransformerLm<T>,
    reward: &R,
    prompts: &[Vec<usize>],
    config: &PpoConfig,
    anchor: Option<&AnchorRegularizer<T>>,
    mut on_iteration: impl FnMut(&IterationMetrics, &TransformerLm<T>) -> Result<()>,
) -> Result<PpoReport> {
    config.validate()?;
    if policy.config != reference.config {
        return Err(Error::ArchitectureMismatch("policy and reference architectures differ".into()));
    }
    if prompts.is_empty() {
        return Err(Error::InvalidArgument("ppo needs at least one prompt".into()));
    }
    for p in prompts {
        if p.len() >= policy.config.max_seq {
            return Err(Error::InvalidArgument(format!(
                "prompt of {} tokens leaves no room under max_seq {}",
                p.len(),
                policy.config.max_seq
            )));
        }
        policy.check_tokens(p)?;
    }
    let mut adam = Adam::new(AdamConfig::with_lr(config.policy_lr));
    let mut value_head = ValueHead::new(policy.config.d_model, config.value_lr);
    let mut report = PpoReport::default();
    for iteration in 0..config.iterations {
        let iter_seed = derive_seed(config.seed, iteration as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(iter_seed);
        let chosen: Vec<Vec<usize>> = (0..config.batch_size)
            .map(|_| prompts[rng.gen_range(0..prompts.len())].clone())
            .collect();
        let seeds: Vec<u64> = (0..config.batch_size as u64).map(|i| derive_seed(iter_seed, i)).collect();
        let batch = collect_rollouts(policy, reference, &value_head, reward, &chosen, &seeds, config)?;
        let mean_kl = batch.mean_kl();
        if !mean_kl.is_finite() || mean_kl > config.kl_ceiling {
            return Err(Error::Divergence(format!(
                "mean KL {mean_kl:.4} exceeds ceiling {} at iteration {iteration}",
                config.kl_ceiling
            )));
        }

        let mut clip_sum = 0.0;
        let mut steps = 0usize;
        let mut order: Vec<usize> = (0..batch.rollouts.len()).collect();
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.minibatch_size) {
                let step = policy_step(policy, &batch, chunk, config.clip_eps, anchor)?;
                let finite = step.loss.is_finite() && step.grads.iter().flatten().all(Tensor::is_finite);
                if !finite {
                    return Err(Error::Divergence(format!(
                        "policy loss or gradient became non-finite at iteration {iteration}"
                    )));
                }
                let refs: Vec<_> = step.grads.iter().map(Option::as_ref).collect();
                adam.step(&mut policy.tensors_mut(), &refs)?;
                let hidden: Vec<&Tensor<T>> = chunk.iter().map(|&i| &batch.rollouts[i].hidden).collect();
                let targets: Vec<f64> = chunk
                    .iter()
                    .flat_map(|&i| batch.rollouts[i].returns.iter().copied())
                    .collect();
                value_head.fit_step(&hidden, &targets)?;
                clip_sum += step.clip_fraction;
                steps += 1;
            }
        }
        let metrics = IterationMetrics {
            iteration,
            mean_reward: batch.mean_score(),
            mean_kl,
            clip_fraction: clip_sum / steps as f64,
            anchor_distance_mean: anchor.map(|a| a.mean_distance(policy)).transpose()?.unwrap_or(0.0),
        };
        on_iteration(&metrics, policy)?;
        report.metrics.push(metrics);
    }
    Ok(report)
}
