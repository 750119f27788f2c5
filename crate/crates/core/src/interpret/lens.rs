// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::Serialize;

use crate::autodiff::softmax_in_place;
use crate::error::{Error, Result};
use crate::lm::{InterventionSpec, TransformerLm};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Probability of one target token read off the residual stream at every
/// layer boundary (`L + 1` entries: embedding, then after each block).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LensTrack {
    pub target: usize,
    pub position: usize,
    pub probs: Vec<f64>,
}

/// Full next-token distributions at every layer boundary for `position`.
pub fn lens_distributions<T: Scalar>(
    model: &TransformerLm<T>,
    tokens: &[usize],
    position: usize,
    intervention: Option<&InterventionSpec>,
) -> Result<Vec<Vec<f64>>> {
    if position >= tokens.len() {
        return Err(Error::Index(format!(
            "position {position} out of range for {} tokens",
            tokens.len()
        )));
    }
    let (_, trace) = model.forward(tokens, intervention, true)?;
    let trace = trace.expect("capture requested");
    trace
        .boundaries()
        .into_iter()
        .map(|states| {
            let row = Tensor::matrix(1, states.cols(), states.row(position).to_vec())?;
            let mut p: Vec<f64> = model.unembed(&row)?.data().iter().map(|x| x.as_f64()).collect();
            softmax_in_place(&mut p);
            Ok(p)
        })
        .collect()
}

pub fn logit_lens<T: Scalar>(
    model: &TransformerLm<T>,
    tokens: &[usize],
    position: usize,
    target: usize,
    intervention: Option<&InterventionSpec>,
) -> Result<LensTrack> {
    if target >= model.config.vocab_size {
        return Err(Error::Index(format!("target token {target} outside vocabulary")));
    }
    let probs = lens_distributions(model, tokens, position, intervention)?
        .into_iter()
        .map(|p| p[target])
        .collect();
    Ok(LensTrack { target, position, probs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::LmConfig;

    #[test]
    fn last_boundary_matches_model_output() {
        let m = TransformerLm::<f64>::init(LmConfig { max_seq: 8, ..LmConfig::toy(11) }, 4).unwrap();
        let tokens = [0, 5, 7, 9];
        let dists = lens_distributions(&m, &tokens, 2, None).unwrap();
        assert_eq!(dists.len(), 5);
        for d in &dists {
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let (logits, _) = m.forward(&tokens, None, false).unwrap();
        let mut p: Vec<f64> = logits.row(2).to_vec();
        softmax_in_place(&mut p);
        for (a, b) in p.iter().zip(&dists[4]) {
            assert!((a - b).abs() < 1e-12);
        }
        let track = logit_lens(&m, &tokens, 2, 6, None).unwrap();
        assert_eq!(track.probs[4], dists[4][6]);
        assert!(logit_lens(&m, &tokens, 4, 6, None).is_err());
        assert!(logit_lens(&m, &tokens, 0, 11, None).is_err());
    }
}
