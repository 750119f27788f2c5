// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use common::{random_model, random_tokens, tiny_config};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use valuelens::data::Checkpoint;
use valuelens::gradcheck::check_model;
use valuelens::lm::train::mean_nll;
use valuelens::lm::{
    mlp_update_decomposition, ForwardOptions, InterventionSpec, LmConfig, Tokenizer, TransformerLm,
};
use valuelens::tensor::Tensor;
use valuelens::{Lm, Lm64, ValueVectorId};

#[test]
fn full_model_gradients_match_finite_differences() {
    for seed in 0..3 {
        let model: Lm64 = random_model(tiny_config(9), seed, 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = vec![random_tokens(&mut rng, 9, 6), random_tokens(&mut rng, 9, 4)];
        for c in check_model(&model, &batch, 1e-5).unwrap() {
            assert!(c.rel_err <= 1e-4, "seed {seed} {}: {}", c.name, c.rel_err);
        }
    }
}

#[test]
fn earlier_positions_ignore_later_tokens() {
    let model: Lm = random_model(tiny_config(11), 3, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let a = random_tokens(&mut rng, 11, 10);
        let cut = rng.gen_range(1..10);
        let mut b = a.clone();
        for t in &mut b[cut..] {
            *t = rng.gen_range(0..11);
        }
        let (la, _) = model.forward(&a, None, false).unwrap();
        let (lb, _) = model.forward(&b, None, false).unwrap();
        for p in 0..cut {
            let same = la.row(p).iter().zip(lb.row(p)).all(|(x, y)| x.to_bits() == y.to_bits());
            assert!(same, "position {p} changed after editing from {cut}");
        }
    }
}

#[test]
fn logits_use_the_embedding_matrix() {
    let model: Lm64 = random_model(tiny_config(7), 5, 0.5);
    let tokens = [0, 3, 6, 2];
    let (logits, trace) = model.forward(&tokens, None, true).unwrap();
    let hidden = trace.unwrap().final_hidden;
    for p in 0..tokens.len() {
        for w in 0..7 {
            let expect: f64 = hidden.row(p).iter().zip(model.embedding.row(w)).map(|(a, b)| a * b).sum();
            assert!((logits.row(p)[w] - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn residual_updates_decompose_into_value_vectors() {
    let model: Lm64 = random_model(tiny_config(10), 8, 0.5);
    let tokens = [1, 4, 4, 9, 0];
    let (_, trace) = model.forward(&tokens, None, true).unwrap();
    let trace = trace.unwrap();
    assert!(trace.accounting_error() < 1e-12);
    for layer in 0..2 {
        for pos in 0..tokens.len() {
            let parts = mlp_update_decomposition(&model, &trace, layer, pos).unwrap();
            for j in 0..8 {
                let sum: f64 = parts.iter().map(|c| c.vector[j]).sum();
                assert!((sum - trace.layers[layer].mlp.row(pos)[j]).abs() < 1e-12);
            }
        }
    }
}

fn random_spec(rng: &mut ChaCha8Rng, config: &LmConfig) -> InterventionSpec {
    let mut ids: Vec<ValueVectorId> = (0..config.n_layers)
        .flat_map(|l| (0..config.d_mlp).map(move |i| ValueVectorId::new(l, i)))
        .collect();
    let k = rng.gen_range(1..=10);
    let mut entries = Vec::new();
    for _ in 0..k {
        let id = ids.swap_remove(rng.gen_range(0..ids.len()));
        entries.push((id, rng.gen_range(-3.0..12.0)));
    }
    InterventionSpec::new(entries).unwrap()
}

fn max_abs_diff(a: &Tensor<f32>, b: &Tensor<f32>) -> f32 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

#[test]
fn scaled_coefficients_match_additive_update_and_baked_values() {
    let config = tiny_config(13);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for case in 0..100 {
        let model: Lm = random_model(config.clone(), case, 0.3);
        let spec = random_spec(&mut rng, &config);
        let len = rng.gen_range(1..=12);
        let tokens = random_tokens(&mut rng, 13, len);
        let (scaled, _) = model.forward(&tokens, Some(&spec), false).unwrap();

        // Oracle 1: add (α - 1)·m_i·v_i to the MLP output, reading m_i from
        // the un-intervened coefficients of the same pass.
        let hook = |layer: usize, coeffs: &Tensor<f32>| {
            let mut delta = Tensor::zeros(&[coeffs.rows(), config.d_model]);
            let mut any = false;
            for (id, alpha) in spec.entries() {
                if id.layer != layer {
                    continue;
                }
                any = true;
                let v = model.value_vector(*id).unwrap();
                for p in 0..coeffs.rows() {
                    let m = coeffs.row(p)[id.index];
                    for (d, x) in delta.row_mut(p).iter_mut().zip(v) {
                        *d += (*alpha as f32 - 1.0) * m * x;
                    }
                }
            }
            any.then_some(delta)
        };
        let opts = ForwardOptions { intervention: None, capture: false, mlp_delta: Some(&hook) };
        let (added, _) = model.forward_with(&tokens, &opts).unwrap();
        assert!(max_abs_diff(&scaled, &added) <= 1e-5, "case {case}: {}", max_abs_diff(&scaled, &added));

        // Oracle 2: multiply the value vectors themselves by α.
        let mut baked = model.clone();
        for (id, alpha) in spec.entries() {
            for x in baked.blocks[id.layer].mlp_values.row_mut(id.index) {
                *x *= *alpha as f32;
            }
        }
        let (edited, _) = baked.forward(&tokens, None, false).unwrap();
        assert!(max_abs_diff(&scaled, &edited) <= 1e-5, "case {case}: {}", max_abs_diff(&scaled, &edited));
    }
}

#[test]
fn unit_alpha_is_bitwise_identity() {
    let config = tiny_config(13);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..20 {
        let model: Lm = random_model(config.clone(), case, 0.3);
        let ids: Vec<ValueVectorId> = random_spec(&mut rng, &config).entries().iter().map(|e| e.0).collect();
        let spec = InterventionSpec::uniform(ids, 1.0).unwrap();
        let tokens = random_tokens(&mut rng, 13, 8);
        let (a, ta) = model.forward(&tokens, None, true).unwrap();
        let (b, tb) = model.forward(&tokens, Some(&spec), true).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(ta, tb);
    }
}

#[test]
fn initial_loss_is_near_uniform() {
    let vocab = 80;
    let model = Lm::init(LmConfig::toy(vocab), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let seqs: Vec<Vec<usize>> = (0..20).map(|_| random_tokens(&mut rng, vocab, 16)).collect();
    let loss = mean_nll(&model, &seqs).unwrap();
    let uniform = (vocab as f64).ln();
    assert!((loss / uniform - 1.0).abs() <= 0.05, "loss {loss} vs ln|V| {uniform}");
}

#[test]
fn checkpoint_round_trip_preserves_every_weight() {
    let tok = Tokenizer::build(["a b c d e f g h i"], 1).unwrap();
    let model: Lm = random_model(tiny_config(tok.len()), 2, 0.3);
    let bytes = model.to_checkpoint(&tok, serde_json::json!({"seed": 2})).unwrap().to_bytes().unwrap();
    let (back, tok2) = TransformerLm::<f32>::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(tok2, tok);
    for ((n, a), (_, b)) in model.named_tensors().into_iter().zip(back.named_tensors()) {
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()), "{n}");
    }
}

#[test]
fn checkpoint_with_foreign_vocabulary_is_rejected() {
    let tok = Tokenizer::build(["a b c d e f g h i"], 1).unwrap();
    let model: Lm = random_model(tiny_config(tok.len()), 2, 0.3);
    let mut ckpt = model.to_checkpoint(&tok, serde_json::json!({})).unwrap();
    ckpt.metadata["vocab"][5] = serde_json::json!("zzz");
    assert!(TransformerLm::<f32>::from_checkpoint(&ckpt).is_err());
    let wrong = Tokenizer::build(["a b"], 1).unwrap();
    assert!(model.to_checkpoint(&wrong, serde_json::json!({})).is_err());
}
