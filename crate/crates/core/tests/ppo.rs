// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use common::{random_model, tiny_config};
use proptest::prelude::*;
use valuelens::autodiff::Tape;
use valuelens::lm::tokenizer::BOS;
use valuelens::ppo::rollout::scored_tokens;
use valuelens::ppo::{
    collect_rollouts, gae, policy_step, response_logprobs, AnchorRegularizer, PpoConfig, RewardModel,
    RolloutBatch, ValueHead,
};
use valuelens::reward::SentimentClassifier;
use valuelens::tensor::Tensor;
use valuelens::{Lm64, ValueVectorId};

const VOCAB: usize = 10;

fn prompts() -> Vec<Vec<usize>> {
    vec![vec![BOS, 4, 5], vec![BOS, 6], vec![BOS, 7, 8, 9], vec![BOS, 5, 5]]
}

fn batch(policy: &Lm64, reference: &Lm64, config: &PpoConfig) -> RolloutBatch<f64> {
    let clf = SentimentClassifier::<f64>::init(VOCAB, 6, 1).unwrap();
    let head = ValueHead::new(policy.config.d_model, config.value_lr);
    let seeds = [11, 12, 13, 14];
    collect_rollouts(policy, reference, &head, &clf, &prompts(), &seeds, config).unwrap()
}

fn flat(grads: &[Option<Tensor<f64>>]) -> Vec<f64> {
    grads.iter().flatten().flat_map(|g| g.data().to_vec()).collect()
}

fn rollout_config() -> PpoConfig {
    PpoConfig { max_new_tokens: 5, ..PpoConfig::default() }
}

/// `(A_t, R_t)` from the definition: A_t = Σ_l (γλ)^l δ_{t+l}.
fn gae_by_definition(r: &[f64], v: &[f64], gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = r.len();
    let value = |t: usize| if t < n { v[t] } else { 0.0 };
    let delta: Vec<f64> = (0..n).map(|t| r[t] + gamma * value(t + 1) - v[t]).collect();
    let adv: Vec<f64> = (0..n)
        .map(|t| (t..n).map(|k| (gamma * lambda).powi((k - t) as i32) * delta[k]).sum())
        .collect();
    let ret = adv.iter().zip(v).map(|(a, b)| a + b).collect();
    (adv, ret)
}

/// Per-token objective written case by case on the sign of A.
fn clipped_objective(ratio: f64, adv: f64, eps: f64) -> (f64, f64) {
    if adv >= 0.0 {
        if ratio < 1.0 + eps { (ratio * adv, ratio * adv) } else { ((1.0 + eps) * adv, 0.0) }
    } else if ratio > 1.0 - eps {
        (ratio * adv, ratio * adv)
    } else {
        ((1.0 - eps) * adv, 0.0)
    }
}

proptest! {
    #[test]
    fn gae_matches_its_definition(
        rv in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..12),
        gamma in 0.5f64..1.0,
        lambda in 0.0f64..1.0,
    ) {
        let (r, v): (Vec<f64>, Vec<f64>) = rv.into_iter().unzip();
        let (a, ret) = gae(&r, &v, gamma, lambda).unwrap();
        let (a2, ret2) = gae_by_definition(&r, &v, gamma, lambda);
        for i in 0..r.len() {
            prop_assert!((a[i] - a2[i]).abs() < 1e-9);
            prop_assert!((ret[i] - ret2[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn surrogate_matches_case_analysis(
        cases in prop::collection::vec((-0.7f64..0.7, -3.0f64..3.0), 1..16),
        eps in 0.05f64..0.5,
    ) {
        let old: Vec<f64> = (0..cases.len()).map(|i| -1.0 - 0.1 * i as f64).collect();
        let logp: Vec<f64> = cases.iter().zip(&old).map(|((d, _), o)| o + d).collect();
        let adv: Vec<f64> = cases.iter().map(|c| c.1).collect();
        let mut tape = Tape::new();
        let x = tape.param_owned(Tensor::from_vec(logp.clone()));
        let loss = tape.clipped_surrogate(x, &old, &adv, eps).unwrap();
        let got = tape.value(loss).item();
        let grads = tape.backward(loss).unwrap();
        let n = cases.len() as f64;
        let mut want = 0.0;
        for i in 0..cases.len() {
            let (obj, dobj) = clipped_objective((logp[i] - old[i]).exp(), adv[i], eps);
            want -= obj / n;
            let g = grads.get(x).map_or(0.0, |g| g.data()[i]);
            prop_assert!((g + dobj / n).abs() < 1e-7, "token {}: {} vs {}", i, g, -dobj / n);
        }
        prop_assert!((got - want).abs() < 1e-7);
    }
}

#[test]
fn unclipped_update_is_the_policy_gradient() {
    let policy: Lm64 = random_model(tiny_config(VOCAB), 3, 0.3);
    let b = batch(&policy, &policy, &rollout_config());
    let all: Vec<usize> = (0..b.rollouts.len()).collect();
    let step = policy_step(&policy, &b, &all, 1e9, None).unwrap();

    // REINFORCE: -mean_t A_t ∇log π(a_t)
    let mut tape = Tape::new();
    let vars = policy.bind(&mut tape, true);
    let mut total = None;
    let n: usize = b.rollouts.iter().map(|r| r.response.len()).sum();
    for r in &b.rollouts {
        let (lp, _) = response_logprobs(&policy, &mut tape, &vars, &r.prompt, &r.response).unwrap();
        let a = tape.constant(Tensor::from_vec(r.advantages.clone()));
        let prod = tape.mul(lp, a).unwrap();
        let s = tape.sum(prod);
        total = Some(match total {
            None => s,
            Some(t) => tape.add(t, s).unwrap(),
        });
    }
    let loss = tape.scale(total.unwrap(), -1.0 / n as f64);
    let g = tape.backward(loss).unwrap();
    let pg: Vec<Option<Tensor<f64>>> = vars.all().iter().map(|v| g.get(*v).cloned()).collect();

    let (x, y) = (flat(&step.grads), flat(&pg));
    let dot: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let cos = dot / (norm(&x) * norm(&y));
    assert!(cos >= 0.99, "cosine {cos}");
}

#[test]
fn anchor_changes_only_the_anchored_rows() {
    let reference: Lm64 = random_model(tiny_config(VOCAB), 5, 0.3);
    let mut policy = reference.clone();
    let ids = [ValueVectorId::new(0, 3), ValueVectorId::new(1, 17), ValueVectorId::new(1, 2)];
    for id in &ids {
        policy.blocks[id.layer].mlp_values.row_mut(id.index)[0] += 0.05;
    }
    let b = batch(&policy, &reference, &rollout_config());
    let all: Vec<usize> = (0..b.rollouts.len()).collect();
    let off = AnchorRegularizer::new(&reference, &ids, 0.0, 1.0).unwrap();
    let on = AnchorRegularizer::new(&reference, &ids, 1e-4, 1.0).unwrap();
    let g0 = policy_step(&policy, &b, &all, 0.2, Some(&off)).unwrap();
    let g1 = policy_step(&policy, &b, &all, 0.2, Some(&on)).unwrap();
    let names: Vec<String> = policy.named_tensors().into_iter().map(|(n, _)| n).collect();
    for ((name, a), bb) in names.iter().zip(&g0.grads).zip(&g1.grads) {
        let (a, bb) = (a.as_ref().unwrap(), bb.as_ref().unwrap());
        for r in 0..a.rows() {
            let anchored = ids.iter().any(|id| *name == format!("blocks.{}.mlp.values", id.layer) && id.index == r);
            let same = a.row(r).iter().zip(bb.row(r)).all(|(x, y)| x.to_bits() == y.to_bits());
            assert_eq!(same, !anchored, "{name} row {r}");
        }
    }
}

#[test]
fn anchor_loss_of_one_half_moved_vector() {
    let reference: Lm64 = random_model(tiny_config(VOCAB), 6, 0.3);
    let cap = 0.8;
    let id = ValueVectorId::new(1, 9);
    let anchor = AnchorRegularizer::new(&reference, &[id, ValueVectorId::new(0, 1)], 1e-4, cap).unwrap();
    let mut moved = reference.clone();
    let row = moved.blocks[1].mlp_values.row_mut(9);
    row[2] += 0.6 * cap / 2.0;
    row[5] -= 0.8 * cap / 2.0;
    let mut tape = Tape::new();
    let vars = moved.bind(&mut tape, true);
    let term = anchor.loss_term(&mut tape, &vars).unwrap().unwrap();
    let want = -1e-4 * cap / 2.0;
    assert!((tape.value(term).item() - want).abs() < 1e-15);
    assert!((anchor.bonus(&moved).unwrap() + want).abs() < 1e-15);

    // beyond the cap the term saturates
    moved.blocks[1].mlp_values.row_mut(9)[0] += 10.0;
    assert!((anchor.bonus(&moved).unwrap() - 1e-4 * cap).abs() < 1e-15);
}

#[test]
fn rollout_scores_are_classifier_scores_of_the_samples() {
    let policy: Lm64 = random_model(tiny_config(VOCAB), 7, 0.3);
    let clf = SentimentClassifier::<f64>::init(VOCAB, 6, 1).unwrap();
    let b = batch(&policy, &policy, &rollout_config());
    let mut direct = 0.0;
    for r in &b.rollouts {
        let s = clf.score(&scored_tokens(&r.prompt, &r.response)).unwrap();
        assert_eq!(s.to_bits(), r.score.to_bits());
        direct += s;
        assert!(r.kl().abs() < 1e-12, "policy equals reference");
        assert_eq!(r.response.len(), r.advantages.len());
    }
    assert!((b.mean_score() - direct / b.rollouts.len() as f64).abs() < 1e-15);
}

#[test]
fn rollouts_do_not_depend_on_thread_count() {
    let policy: Lm64 = random_model(tiny_config(VOCAB), 8, 0.3);
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| batch(&policy, &policy, &rollout_config()))
    };
    let (a, b) = (run(1), run(3));
    for (x, y) in a.rollouts.iter().zip(&b.rollouts) {
        assert_eq!(x.response, y.response);
        assert_eq!(x.advantages, y.advantages);
        assert_eq!(x.score.to_bits(), y.score.to_bits());
    }
}

struct Constant(f64);

impl RewardModel for Constant {
    fn score(&self, _: &[usize]) -> valuelens::Result<f64> {
        Ok(self.0)
    }
}

#[test]
fn constant_reward_lands_on_the_last_token() {
    let policy: Lm64 = random_model(tiny_config(VOCAB), 9, 0.3);
    let config = rollout_config();
    let head = ValueHead::new(policy.config.d_model, config.value_lr);
    let seeds = [1, 2, 3, 4];
    let b = collect_rollouts(&policy, &policy, &head, &Constant(0.7), &prompts(), &seeds, &config).unwrap();
    for r in &b.rollouts {
        assert!((r.score - 0.7).abs() < 1e-15);
        assert_eq!(*r.rewards.last().unwrap(), 0.7);
    }
}
