// SPDX-License-Identifier: MIT OR Apache-2.0

//! Central finite-difference oracle for the autodiff ops.
//!
//! The numeric side only ever evaluates forward values on fresh tapes, so
//! it stays independent of every backward rule it checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::lm::train::{batch_loss_and_grads, mean_nll};
use crate::lm::TransformerLm;
use crate::tensor::Tensor;

/// Result of comparing analytic and numeric gradients for one function.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub name: String,
    /// `max |analytic - numeric| / max(max|analytic|, max|numeric|, ABS_FLOOR)`,
    /// taken per input tensor and then maximized over inputs.
    pub rel_err: f64,
}

pub type ScalarFn<'f> = dyn for<'t> Fn(&mut Tape<'t, f64>, &[Var]) -> Result<Var> + 'f;

/// Compare `backward` against central differences with step `h` for every
/// element of every input.
pub fn check(name: &str, inputs: &[Tensor<f64>], f: &ScalarFn<'_>, h: f64) -> Result<GradCheck> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t)).collect();
    let root = f(&mut tape, &vars)?;
    let grads = tape.backward(root)?;

    let eval = |perturbed: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.param(t)).collect();
        let root = f(&mut tape, &vars)?;
        Ok(tape.value(root).item())
    };

    let mut worst: f64 = 0.0;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..inputs[k].numel() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + h;
            let up = eval(&work)?;
            work[k].data_mut()[i] = orig - h;
            let down = eval(&work)?;
            work[k].data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(GradCheck {
        name: name.to_string(),
        rel_err: worst,
    })
}

/// Gradients smaller than this are compared in absolute terms. Some true
/// gradients are exactly zero (attention key biases shift every score of
/// a row equally), and there the numeric side is pure rounding noise.
pub const ABS_FLOOR: f64 = 1e-6;

pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let scale = a
        .iter()
        .chain(b)
        .fold(ABS_FLOOR, |m, v| m.max(v.abs()));
    let diff = a
        .iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / scale
}

pub fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.sample::<f64, _>(StandardNormal))
}

/// Reduce a tensor to a scalar with fixed random weights, so that ops with
/// constant sums (softmax) still get a non-trivial gradient signal.
pub fn weighted_sum<'t>(tape: &mut Tape<'t, f64>, x: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let w = tape.constant(randn(&mut rng, &shape));
    let prod = tape.mul(x, w)?;
    Ok(tape.sum(prod))
}

/// Finite-difference checks for every differentiable op on inputs drawn
/// from `seed`.
pub fn check_all_ops(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-4;
    let mut out = Vec::new();

    let a = randn(&mut rng, &[5, 4]);
    let b = randn(&mut rng, &[4, 3]);
    out.push(check("matmul", &[a.clone(), b], &move |t, v| {
        let y = t.matmul(v[0], v[1])?;
        weighted_sum(t, y, seed)
    }, h)?);

    let bt = randn(&mut rng, &[3, 4]);
    out.push(check("matmul_t", &[a.clone(), bt], &move |t, v| {
        let y = t.matmul_t(v[0], v[1])?;
        weighted_sum(t, y, seed)
    }, h)?);

    out.push(check("transpose", std::slice::from_ref(&a), &move |t, v| {
        let y = t.transpose(v[0])?;
        weighted_sum(t, y, seed)
    }, h)?);

    let a2 = randn(&mut rng, &[5, 4]);
    out.push(check("add_sub_mul", &[a.clone(), a2], &move |t, v| {
        let s = t.add(v[0], v[1])?;
        let d = t.sub(v[0], v[1])?;
        let p = t.mul(s, d)?;
        weighted_sum(t, p, seed)
    }, h)?);

    let bias = randn(&mut rng, &[4]);
    out.push(check("add_row", &[a.clone(), bias], &move |t, v| {
        let y = t.add_row(v[0], v[1])?;
        weighted_sum(t, y, seed)
    }, h)?);

    let factors: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
    out.push(check("scale_cols", std::slice::from_ref(&a), &move |t, v| {
        let y = t.scale_cols(v[0], factors.clone())?;
        let y = t.scale(y, 0.7);
        weighted_sum(t, y, seed)
    }, h)?);

    let g = randn(&mut rng, &[3, 6]).map(|x| 2.0 * x);
    out.push(check("gelu", &[g], &move |t, v| {
        let y = t.gelu(v[0]);
        weighted_sum(t, y, seed)
    }, h)?);

    let s = randn(&mut rng, &[1, 7]);
    out.push(check("softmax", std::slice::from_ref(&s), &move |t, v| {
        let y = t.softmax(v[0]);
        weighted_sum(t, y, seed)
    }, h)?);
    out.push(check("log_softmax", &[s], &move |t, v| {
        let y = t.log_softmax(v[0]);
        weighted_sum(t, y, seed)
    }, h)?);

    let x = randn(&mut rng, &[3, 8]);
    let gain = randn(&mut rng, &[8]);
    let lb = randn(&mut rng, &[8]);
    out.push(check("layer_norm", &[x, gain, lb], &move |t, v| {
        let y = t.layer_norm(v[0], v[1], v[2])?;
        weighted_sum(t, y, seed)
    }, h)?);

    let logits = randn(&mut rng, &[6, 11]);
    let targets: Vec<usize> = (0..6).map(|_| rng.gen_range(0..11)).collect();
    out.push(check("cross_entropy", &[logits], &move |t, v| {
        t.cross_entropy(v[0], &targets)
    }, h)?);

    let table = randn(&mut rng, &[6, 3]);
    let ids: Vec<usize> = vec![2, 0, 2, 5];
    let picks: Vec<usize> = vec![1, 0, 2, 2];
    out.push(check("gather_pick_slice_concat", &[table], &move |t, v| {
        let rows = t.gather_rows(v[0], &ids)?;
        let tail = t.slice_rows(rows, 1, 3)?;
        let head = t.slice_rows(rows, 0, 2)?;
        let both = t.concat(&[head, tail])?;
        let picked = t.pick_cols(both, &[1, 0, 2, 2, 0])?;
        let picked2 = t.pick_cols(rows, &picks)?;
        let cat = t.concat(&[picked, picked2])?;
        let m = t.mean(cat);
        let s = weighted_sum(t, cat, seed)?;
        t.add(m, s)
    }, h)?);

    let seg = randn(&mut rng, &[7, 3]);
    out.push(check("segment_mean", &[seg], &move |t, v| {
        let y = t.segment_mean(v[0], &[(0, 3), (3, 1), (4, 3)])?;
        weighted_sum(t, y, seed)
    }, h)?);

    let q = randn(&mut rng, &[5, 8]);
    let k = randn(&mut rng, &[5, 8]);
    let vv = randn(&mut rng, &[5, 8]);
    out.push(check("causal_attention", &[q, k, vv], &move |t, v| {
        let y = t.causal_attention(v[0], v[1], v[2], 2)?;
        weighted_sum(t, y, seed)
    }, h)?);

    // Keep ratios away from the clip kinks, where the objective is not
    // differentiable.
    let n = 9;
    let old: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..-0.5)).collect();
    let adv: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let eps = 0.2;
    let new: Vec<f64> = old
        .iter()
        .map(|&o| {
            let options = [-0.5, -0.1, 0.05, 0.1, 0.5];
            o + options[rng.gen_range(0..options.len())]
        })
        .collect();
    out.push(check("clipped_surrogate", &[Tensor::from_vec(new)], &move |t, v| {
        t.clipped_surrogate(v[0], &old, &adv, eps)
    }, h)?);

    let w = randn(&mut rng, &[6, 4]);
    let rows = vec![1usize, 4];
    let mut snapshot = w.row(1).to_vec();
    snapshot.extend_from_slice(w.row(4));
    snapshot.iter_mut().for_each(|x| *x += rng.gen_range(-0.5..0.5));
    out.push(check("anchor_distance", &[w], &move |t, v| {
        t.anchor_distance(v[0], &rows, &snapshot, 100.0)
    }, h)?);

    let z = randn(&mut rng, &[6]);
    let labels: Vec<f64> = (0..6).map(|i| (i % 2) as f64).collect();
    let targets: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    out.push(check("bce_mse", &[z], &move |t, v| {
        let b = t.bce_with_logits(v[0], &labels)?;
        let m = t.mse(v[0], &targets)?;
        t.add(b, m)
    }, h)?);

    Ok(out)
}

/// Finite-difference check of the full next-token loss of `model` on
/// `batch`, one result per parameter tensor. The numeric side perturbs
/// weights and re-evaluates the inference forward pass.
pub fn check_model(model: &TransformerLm<f64>, batch: &[Vec<usize>], h: f64) -> Result<Vec<GradCheck>> {
    let (_, grads) = batch_loss_and_grads(model, batch)?;
    let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
    let mut work = model.clone();
    let mut out = Vec::with_capacity(names.len());
    for (k, name) in names.into_iter().enumerate() {
        let numel = work.tensors_mut()[k].numel();
        let analytic = grads[k]
            .as_ref()
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; numel]);
        let mut numeric = Vec::with_capacity(numel);
        for i in 0..numel {
            let orig = work.tensors_mut()[k].data()[i];
            work.tensors_mut()[k].data_mut()[i] = orig + h;
            let up = mean_nll(&work, batch)?;
            work.tensors_mut()[k].data_mut()[i] = orig - h;
            let down = mean_nll(&work, batch)?;
            work.tensors_mut()[k].data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        out.push(GradCheck {
            rel_err: relative_error(&analytic, &numeric),
            name,
        });
    }
    Ok(out)
}
