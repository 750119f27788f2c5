// SPDX-License-Identifier: MIT OR Apache-2.0

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use valuelens::lm::{LmConfig, TransformerLm};
use valuelens::Scalar;

pub fn tiny_config(vocab: usize) -> LmConfig {
    LmConfig {
        vocab_size: vocab,
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        d_mlp: 32,
        max_seq: 12,
    }
}

/// A model whose every parameter is drawn from N(0, std²), so gradients
/// and coefficients are far from the near-zero regime of the default init.
pub fn random_model<T: Scalar>(config: LmConfig, seed: u64, std: f64) -> TransformerLm<T> {
    let mut m = TransformerLm::<T>::init(config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    for t in m.tensors_mut() {
        for x in t.data_mut() {
            *x = T::of(std * rng.sample::<f64, _>(StandardNormal));
        }
    }
    m
}

pub fn random_tokens(rng: &mut ChaCha8Rng, vocab: usize, len: usize) -> Vec<usize> {
    (0..len).map(|_| rng.gen_range(0..vocab)).collect()
}
