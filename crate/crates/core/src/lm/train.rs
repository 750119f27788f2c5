// SPDX-License-Identifier: MIT OR Apache-2.0

//! Next-token pretraining of the toy model.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AdamConfig, Tape};
use crate::error::{Error, Result};
use crate::lm::model::{ForwardOptions, TransformerLm};
use crate::lm::tokenizer::{Tokenizer, BOS, EOS};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak learning rate, reached linearly over `warmup_steps`.
    pub lr: f64,
    pub warmup_steps: usize,
    pub seed: u64,
    /// Evaluate heldout perplexity (and fire the checkpoint callback) every
    /// this many optimizer steps; 0 evaluates only at the end.
    pub eval_every: usize,
    pub heldout_fraction: f64,
}

impl Default for LmTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            lr: 1e-3,
            warmup_steps: 200,
            seed: 0,
            eval_every: 0,
            heldout_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LmTrainReport {
    /// `(step, mean training loss of that batch)`.
    pub loss_curve: Vec<(usize, f64)>,
    /// `(step, heldout perplexity)`.
    pub evals: Vec<(usize, f64)>,
    pub heldout_perplexity: f64,
    pub train_sequences: usize,
    pub heldout_sequences: usize,
}

/// `<bos> sentence <eos>` for each sentence.
pub fn encode_sequences(tokenizer: &Tokenizer, sentences: &[&str]) -> Vec<Vec<usize>> {
    sentences
        .iter()
        .map(|s| {
            let mut ids = vec![BOS];
            ids.extend(tokenizer.encode(s));
            ids.push(EOS);
            ids
        })
        .collect()
}

/// Deterministic split: a seeded shuffle, with the last `fraction` heldout.
pub fn split_heldout<X: Clone>(items: &[X], fraction: f64, seed: u64) -> (Vec<X>, Vec<X>) {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
    let n_held = ((items.len() as f64) * fraction).round() as usize;
    let n_held = n_held.min(items.len().saturating_sub(1));
    let cut = items.len() - n_held;
    let pick = |ix: &[usize]| ix.iter().map(|&i| items[i].clone()).collect();
    (pick(&order[..cut]), pick(&order[cut..]))
}

/// Mean next-token NLL over all positions of all sequences.
pub fn mean_nll<T: Scalar>(model: &TransformerLm<T>, seqs: &[Vec<usize>]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for s in seqs {
        if s.len() < 2 {
            continue;
        }
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, false);
        let out = model.forward_on_tape(&mut tape, &vars, &s[..s.len() - 1], &ForwardOptions::default())?;
        let loss = tape.cross_entropy(out.logits, &s[1..])?;
        total += tape.value(loss).item().as_f64() * (s.len() - 1) as f64;
        count += s.len() - 1;
    }
    if count == 0 {
        return Err(Error::InvalidArgument("no predictable tokens".into()));
    }
    Ok(total / count as f64)
}

/// Loss on one batch: token-weighted mean cross-entropy. Also returns the
/// gradients in `named_tensors` order.
pub fn batch_loss_and_grads<T: Scalar>(
    model: &TransformerLm<T>,
    batch: &[Vec<usize>],
) -> Result<(f64, Vec<Option<crate::tensor::Tensor<T>>>)> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, true);
    let total_tokens: usize = batch.iter().map(|s| s.len() - 1).sum();
    let mut acc = None;
    for s in batch {
        let out = model.forward_on_tape(&mut tape, &vars, &s[..s.len() - 1], &ForwardOptions::default())?;
        let ce = tape.cross_entropy(out.logits, &s[1..])?;
        let w = T::of((s.len() - 1) as f64 / total_tokens as f64);
        let ce = tape.scale(ce, w);
        acc = Some(match acc {
            None => ce,
            Some(a) => tape.add(a, ce)?,
        });
    }
    let root = acc.ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let loss = tape.value(root).item().as_f64();
    let grads = tape.backward(root)?;
    Ok((loss, vars.all().iter().map(|v| grads.get(*v).cloned()).collect()))
}

/// Train with Adam on `sentences`. `on_eval(step, model)` runs at every
/// evaluation point (for checkpointing).
pub fn train_lm<T: Scalar>(
    model: &mut TransformerLm<T>,
    tokenizer: &Tokenizer,
    sentences: &[&str],
    config: &LmTrainConfig,
    mut on_eval: impl FnMut(usize, &TransformerLm<T>) -> Result<()>,
) -> Result<LmTrainReport> {
    if tokenizer.len() != model.config.vocab_size {
        return Err(Error::TokenizerMismatch(format!(
            "tokenizer has {} tokens, model expects {}",
            tokenizer.len(),
            model.config.vocab_size
        )));
    }
    let seqs = encode_sequences(tokenizer, sentences);
    let (train, heldout) = split_heldout(&seqs, config.heldout_fraction, config.seed);
    if config.batch_size == 0 || train.len() < config.batch_size {
        return Err(Error::InvalidArgument(format!(
            "corpus of {} training sequences is smaller than one batch of {}",
            train.len(),
            config.batch_size
        )));
    }
    if let Some(s) = seqs.iter().find(|s| s.len() - 1 > model.config.max_seq) {
        return Err(Error::InvalidArgument(format!(
            "sequence of {} tokens exceeds max_seq {}",
            s.len(),
            model.config.max_seq
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr));
    let mut report = LmTrainReport {
        train_sequences: train.len(),
        heldout_sequences: heldout.len(),
        ..Default::default()
    };
    let eval_set = if heldout.is_empty() { &train } else { &heldout };
    let mut step = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < config.batch_size {
                continue;
            }
            let batch: Vec<Vec<usize>> = chunk.iter().map(|&i| train[i].clone()).collect();
            let (loss, grads) = batch_loss_and_grads(model, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("training loss became {loss} at step {step}")));
            }
            let grad_refs: Vec<_> = grads.iter().map(Option::as_ref).collect();
            adam.config.lr = config.lr * ((step + 1) as f64 / config.warmup_steps.max(1) as f64).min(1.0);
            adam.step(&mut model.tensors_mut(), &grad_refs)?;
            step += 1;
            report.loss_curve.push((step, loss));
            if config.eval_every > 0 && step % config.eval_every == 0 {
                let ppl = mean_nll(model, eval_set)?.exp();
                report.evals.push((step, ppl));
                on_eval(step, model)?;
            }
        }
    }
    report.heldout_perplexity = mean_nll(model, eval_set)?.exp();
    if report.evals.last().map(|e| e.0) != Some(step) {
        report.evals.push((step, report.heldout_perplexity));
        on_eval(step, model)?;
    }
    Ok(report)
}
