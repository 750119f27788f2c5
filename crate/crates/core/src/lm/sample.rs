// SPDX-License-Identifier: MIT OR Apache-2.0

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lm::intervention::InterventionSpec;
use crate::lm::model::TransformerLm;
use crate::lm::tokenizer::EOS;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SampleMode {
    /// Argmax decoding, the zero-temperature limit.
    Greedy,
    Temperature(f64),
}

impl SampleMode {
    pub fn validate(self) -> Result<()> {
        match self {
            SampleMode::Temperature(t) if !(t > 0.0 && t.is_finite()) => Err(Error::InvalidArgument(
                format!("temperature must be positive, got {t}"),
            )),
            _ => Ok(()),
        }
    }
}

/// Draw one token id from `logits`. Ties in greedy mode go to the lowest id.
pub fn sample_from_logits<T: Scalar>(logits: &[T], mode: SampleMode, rng: &mut impl Rng) -> usize {
    match mode {
        SampleMode::Greedy => {
            let mut best = 0;
            for (i, &v) in logits.iter().enumerate() {
                if v > logits[best] {
                    best = i;
                }
            }
            best
        }
        SampleMode::Temperature(t) => {
            let scaled: Vec<f64> = logits.iter().map(|&v| v.as_f64() / t).collect();
            let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = scaled.iter().map(|v| (v - max).exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.gen::<f64>() * total;
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    return i;
                }
                u -= w;
            }
            weights.len() - 1
        }
    }
}

/// Independent seed for item `stream` of a run seeded with `seed`
/// (splitmix64 finalizer over the pair). Per-item seeds make sampled
/// outputs independent of batching and thread count.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(stream)
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Autoregressively extend `prompt` by at most `max_new` tokens, stopping
/// after EOS or at the model's context limit. Returns only the new ids.
pub fn sample<T: Scalar>(
    model: &TransformerLm<T>,
    prompt: &[usize],
    max_new: usize,
    mode: SampleMode,
    seed: u64,
    intervention: Option<&InterventionSpec>,
) -> Result<Vec<usize>> {
    mode.validate()?;
    model.check_tokens(prompt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seq = prompt.to_vec();
    let mut out = Vec::with_capacity(max_new);
    while out.len() < max_new && seq.len() < model.config.max_seq {
        let logits = model.next_token_logits(&seq, intervention)?;
        let next = sample_from_logits(&logits, mode, &mut rng);
        seq.push(next);
        out.push(next);
        if next == EOS {
            break;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::model::LmConfig;

    #[test]
    fn derived_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(derive_seed(1, 0), derive_seed(0, 1));
    }
    use crate::tensor::Tensor;

    fn zero_model(vocab: usize) -> TransformerLm<f32> {
        let mut m = TransformerLm::init(LmConfig { max_seq: 8, ..LmConfig::toy(vocab) }, 1).unwrap();
        m.embedding = Tensor::zeros(&[vocab, 64]);
        m
    }

    #[test]
    fn greedy_is_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_from_logits(&[0.1f32, 3.0, -1.0, 2.9], SampleMode::Greedy, &mut rng), 1);
    }

    #[test]
    fn rejects_non_positive_temperature() {
        let m = zero_model(6);
        assert!(sample(&m, &[0], 3, SampleMode::Temperature(0.0), 1, None).is_err());
        assert!(sample(&m, &[0], 3, SampleMode::Temperature(-1.0), 1, None).is_err());
    }

    #[test]
    fn same_seed_same_output() {
        let m = TransformerLm::<f32>::init(LmConfig { max_seq: 16, ..LmConfig::toy(12) }, 3).unwrap();
        let a = sample(&m, &[0, 5], 10, SampleMode::Temperature(1.0), 42, None).unwrap();
        let b = sample(&m, &[0, 5], 10, SampleMode::Temperature(1.0), 42, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stops_at_context_limit() {
        let m = zero_model(6);
        let out = sample(&m, &[0, 4, 4], 100, SampleMode::Greedy, 0, None).unwrap();
        // uniform logits: greedy picks id 0, never EOS, so the context fills up
        assert_eq!(out.len(), 5);
    }

    #[test]
    fn uniform_logits_give_uniform_draws() {
        let m = zero_model(8);
        let logits = m.next_token_logits(&[0, 5, 6], None).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 10_000;
        let mut counts = [0usize; 8];
        for _ in 0..draws {
            counts[sample_from_logits(&logits, SampleMode::Temperature(1.0), &mut rng)] += 1;
        }
        let expected = draws as f64 / 8.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let df = 7.0f64;
        assert!(chi2 < df + 3.0 * (2.0 * df).sqrt(), "chi2 {chi2} counts {counts:?}");
    }
}
