// SPDX-License-Identifier: MIT OR Apache-2.0

use super::*;
use crate::gradcheck;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

#[test]
fn square_derivative() {
    let x = t(&[1], &[3.0]);
    let mut tape = Tape::new();
    let v = tape.param(&x);
    let y = tape.mul(v, v).unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(v).unwrap().item(), 6.0);
}

#[test]
fn product_derivative() {
    let (x, y) = (t(&[1], &[2.0]), t(&[1], &[5.0]));
    let mut tape = Tape::new();
    let (vx, vy) = (tape.param(&x), tape.param(&y));
    let p = tape.mul(vx, vy).unwrap();
    let g = tape.backward(p).unwrap();
    assert_eq!(g.get(vx).unwrap().item(), 5.0);
    assert_eq!(g.get(vy).unwrap().item(), 2.0);
}

#[test]
fn non_scalar_root_is_a_contract_error() {
    let x = t(&[2], &[1.0, 2.0]);
    let mut tape = Tape::new();
    let v = tape.param(&x);
    assert!(matches!(tape.backward(v), Err(Error::Contract(_))));
}

#[test]
fn softmax_uniform_and_stable() {
    let x = t(&[1, 4], &[0.0; 4]);
    let big = t(&[1, 2], &[1000.0, 0.0]);
    let mut tape = Tape::new();
    let (vx, vb) = (tape.constant_ref(&x), tape.constant_ref(&big));
    let sx = tape.softmax(vx);
    let sb = tape.softmax(vb);
    assert_eq!(tape.value(sx).data(), &[0.25; 4]);
    let out = tape.value(sb).data();
    assert!(out[0] > 0.999_999 && out[1] < 1e-12 && out.iter().all(|v| v.is_finite()));
}

#[test]
fn layer_norm_examples() {
    let x = t(&[1, 2], &[1.0, 3.0]);
    let c = t(&[1, 3], &[4.0, 4.0, 4.0]);
    let (g2, b2) = (t(&[2], &[1.0, 1.0]), t(&[2], &[0.0, 0.0]));
    let (g3, b3) = (t(&[3], &[1.0; 3]), t(&[3], &[0.0; 3]));
    let mut tape = Tape::new();
    let vars = [&x, &g2, &b2, &c, &g3, &b3].map(|v| tape.constant_ref(v));
    let y = tape.layer_norm(vars[0], vars[1], vars[2]).unwrap();
    let z = tape.layer_norm(vars[3], vars[4], vars[5]).unwrap();
    let y = tape.value(y).data();
    assert!((y[0] + 1.0).abs() < 1e-4 && (y[1] - 1.0).abs() < 1e-4, "{y:?}");
    assert_eq!(tape.value(z).data(), &[0.0; 3]);
}

#[test]
fn layer_norm_rejects_width_one() {
    let x = t(&[2, 1], &[1.0, 2.0]);
    let g = t(&[1], &[1.0]);
    let mut tape = Tape::new();
    let (vx, vg) = (tape.constant_ref(&x), tape.constant_ref(&g));
    assert!(tape.layer_norm(vx, vg, vg).is_err());
}

#[test]
fn gelu_values() {
    assert_eq!(gelu(0.0f64), 0.0);
    assert!((gelu(10.0f64) - 10.0).abs() < 1e-9);
    assert!(gelu(-10.0f64).abs() < 1e-9);
}

#[test]
fn cross_entropy_examples() {
    let uniform = t(&[2, 4], &[0.0; 8]);
    let mut saturated = vec![0.0; 4];
    saturated[2] = 1000.0;
    let sat = t(&[1, 4], &saturated);
    let mut tape = Tape::new();
    let (u, s) = (tape.constant_ref(&uniform), tape.constant_ref(&sat));
    let lu = tape.cross_entropy(u, &[0, 3]).unwrap();
    let ls = tape.cross_entropy(s, &[2]).unwrap();
    assert!((tape.value(lu).item() - 4f64.ln()).abs() < 1e-12);
    assert!(tape.value(ls).item().abs() < 1e-12);
    assert!(matches!(tape.cross_entropy(u, &[0, 4]), Err(Error::Index(_))));
}

#[test]
fn attention_is_causal() {
    let q = t(&[3, 2], &[0.3, -1.0, 2.0, 0.5, -0.7, 0.1]);
    let k = q.map(|v| v * 0.5 + 0.1);
    let v = q.map(|v| -v);
    let mut k2 = k.clone();
    let mut v2 = v.clone();
    k2.row_mut(2).copy_from_slice(&[9.0, -9.0]);
    v2.row_mut(2).copy_from_slice(&[5.0, 5.0]);
    let mut tape = Tape::new();
    let vars = [&q, &k, &v, &k2, &v2].map(|x| tape.constant_ref(x));
    let a = tape.causal_attention(vars[0], vars[1], vars[2], 1).unwrap();
    let b = tape.causal_attention(vars[0], vars[3], vars[4], 1).unwrap();
    assert_eq!(tape.value(a).row(0), tape.value(b).row(0));
    assert_eq!(tape.value(a).row(1), tape.value(b).row(1));
    assert_ne!(tape.value(a).row(2), tape.value(b).row(2));
    // First row can only attend to itself.
    assert_eq!(tape.value(a).row(0), v.row(0));
}

#[test]
fn every_op_matches_finite_differences() {
    for seed in 0..3 {
        for c in gradcheck::check_all_ops(seed).unwrap() {
            assert!(c.rel_err <= 1e-4, "seed {seed}: {} rel err {:e}", c.name, c.rel_err);
        }
    }
}

#[test]
fn backward_twice_is_bitwise_identical() {
    let x = gradcheck::randn(&mut rand::SeedableRng::seed_from_u64(3), &[4, 5]);
    let w = gradcheck::randn(&mut rand::SeedableRng::seed_from_u64(4), &[5, 5]);
    let mut tape = Tape::new();
    let (vx, vw) = (tape.param(&x), tape.param(&w));
    let h = tape.matmul(vx, vw).unwrap();
    let h = tape.gelu(h);
    let s = tape.softmax(h);
    let l = gradcheck::weighted_sum(&mut tape, s, 1).unwrap();
    let g1 = tape.backward(l).unwrap();
    let g2 = tape.backward(l).unwrap();
    for v in [vx, vw] {
        let (a, b) = (g1.get(v).unwrap().data(), g2.get(v).unwrap().data());
        assert!(a.iter().zip(b).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn ops_do_not_mutate_inputs() {
    let x = gradcheck::randn(&mut rand::SeedableRng::seed_from_u64(5), &[3, 4]);
    let before = x.clone();
    let mut tape = Tape::new();
    let v = tape.param(&x);
    let y = tape.layer_norm(v, v, v);
    assert!(y.is_err());
    let s = tape.softmax(v);
    let l = tape.log_softmax(s);
    let m = tape.mean(l);
    tape.backward(m).unwrap();
    drop(tape);
    assert_eq!(x, before);
}

#[test]
fn surrogate_gradient_vanishes_when_clip_branch_selected() {
    // A > 0 and ratio above 1 + eps: min picks the clipped constant.
    let lp = t(&[1], &[0.5]);
    let mut tape = Tape::new();
    let v = tape.param(&lp);
    let loss = tape.clipped_surrogate(v, &[0.0], &[1.0], 0.2).unwrap();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(v).unwrap().item(), 0.0);
    // Same ratio with A < 0: unclipped branch is the min, gradient is ρA.
    let mut tape = Tape::new();
    let v = tape.param(&lp);
    let loss = tape.clipped_surrogate(v, &[0.0], &[-1.0], 0.2).unwrap();
    let g = tape.backward(loss).unwrap();
    let expected = 0.5f64.exp();
    assert!((g.get(v).unwrap().item() - expected).abs() < 1e-12);
}

#[test]
fn surrogate_rejects_nan() {
    let lp = t(&[1], &[f64::NAN]);
    let mut tape = Tape::new();
    let v = tape.param(&lp);
    assert!(matches!(
        tape.clipped_surrogate(v, &[0.0], &[1.0], 0.2),
        Err(Error::NonFinite(_))
    ));
}
