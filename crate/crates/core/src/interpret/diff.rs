// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::Serialize;

use crate::error::{Error, Result};
use crate::histogram::Histogram;
use crate::lm::{InterventionSpec, TransformerLm, ValueVectorId};
use crate::scalar::Scalar;
use crate::tensor::cosine;

/// Histogram of per-vector cosines: 10 buckets of width 1e-4 over
/// `[0.999, 1.0]`; anything lower is underflow.
pub type CosineHistogram = Histogram;

pub const DIFF_HIST_LO: f64 = 0.999;
pub const DIFF_HIST_BUCKETS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightDiff {
    /// Per value vector, layer-major.
    pub value_cosines: Vec<(ValueVectorId, f64)>,
    pub key_cosines: Vec<(ValueVectorId, f64)>,
    pub value_hist: CosineHistogram,
    pub key_hist: CosineHistogram,
}

impl WeightDiff {
    /// Fraction of value vectors with cosine at least `threshold`.
    pub fn value_fraction_at_least(&self, threshold: f64) -> f64 {
        let n = self.value_cosines.iter().filter(|(_, c)| *c >= threshold).count();
        n as f64 / self.value_cosines.len() as f64
    }
}

fn cosines<T: Scalar>(
    a: &TransformerLm<T>,
    b: &TransformerLm<T>,
    pick: impl Fn(&TransformerLm<T>, ValueVectorId) -> Result<&[T]>,
) -> Result<Vec<(ValueVectorId, f64)>> {
    let mut out = Vec::with_capacity(a.config.value_vector_count());
    for layer in 0..a.config.n_layers {
        for index in 0..a.config.d_mlp {
            let id = ValueVectorId::new(layer, index);
            let x: Vec<f64> = pick(a, id)?.iter().map(|v| v.as_f64()).collect();
            let y: Vec<f64> = pick(b, id)?.iter().map(|v| v.as_f64()).collect();
            out.push((id, cosine(&x, &y)));
        }
    }
    Ok(out)
}

/// Per-vector cosine between two checkpoints of the same architecture.
pub fn weight_diff<T: Scalar>(a: &TransformerLm<T>, b: &TransformerLm<T>) -> Result<WeightDiff> {
    if a.config != b.config {
        return Err(Error::ArchitectureMismatch(format!(
            "cannot diff {:?} against {:?}",
            a.config, b.config
        )));
    }
    let value_cosines = cosines(a, b, |m, id| m.value_vector(id))?;
    let key_cosines = cosines(a, b, |m, id| m.key_vector(id))?;
    let hist = |c: &[(ValueVectorId, f64)]| {
        Histogram::from_values(DIFF_HIST_LO, 1.0, DIFF_HIST_BUCKETS, c.iter().map(|x| x.1))
    };
    Ok(WeightDiff {
        value_hist: hist(&value_cosines),
        key_hist: hist(&key_cosines),
        value_cosines,
        key_cosines,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ActivationDelta {
    pub layer: usize,
    pub index: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    /// `mean_b - mean_a`.
    pub delta: f64,
}

/// Mean coefficient of one value vector over all positions of `prompts`.
fn mean_coefficients<T: Scalar>(
    model: &TransformerLm<T>,
    spec: Option<&InterventionSpec>,
    prompts: &[Vec<usize>],
    ids: &[ValueVectorId],
) -> Result<Vec<f64>> {
    let mut sums = vec![0.0; ids.len()];
    let mut count = 0usize;
    for p in prompts {
        let (_, trace) = model.forward(p, spec, true)?;
        let trace = trace.expect("capture requested");
        for (s, id) in sums.iter_mut().zip(ids) {
            let coeffs = &trace.layers[id.layer].coeffs;
            *s += (0..coeffs.rows()).map(|r| coeffs.row(r)[id.index].as_f64()).sum::<f64>();
        }
        count += p.len();
    }
    Ok(sums.into_iter().map(|s| s / count as f64).collect())
}

/// Mean coefficients of `ids` under two (model, intervention) settings over
/// the same prompts.
pub fn activation_diff<T: Scalar>(
    model_a: &TransformerLm<T>,
    spec_a: Option<&InterventionSpec>,
    model_b: &TransformerLm<T>,
    spec_b: Option<&InterventionSpec>,
    prompts: &[Vec<usize>],
    ids: &[ValueVectorId],
) -> Result<Vec<ActivationDelta>> {
    if model_a.config != model_b.config {
        return Err(Error::ArchitectureMismatch("activation diff needs matching architectures".into()));
    }
    if prompts.is_empty() {
        return Err(Error::InvalidArgument("activation diff needs at least one prompt".into()));
    }
    for &id in ids {
        model_a.check_id(id)?;
    }
    let a = mean_coefficients(model_a, spec_a, prompts, ids)?;
    let b = mean_coefficients(model_b, spec_b, prompts, ids)?;
    Ok(ids
        .iter()
        .zip(a.into_iter().zip(b))
        .map(|(id, (mean_a, mean_b))| ActivationDelta {
            layer: id.layer,
            index: id.index,
            mean_a,
            mean_b,
            delta: mean_b - mean_a,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::LmConfig;

    #[test]
    fn identical_models() {
        let m = TransformerLm::<f32>::init(LmConfig::toy(12), 1).unwrap();
        let d = weight_diff(&m, &m).unwrap();
        assert_eq!(d.value_hist.total(), 4 * 256);
        assert_eq!(d.value_hist.counts[9], 4 * 256);
        assert_eq!(d.value_fraction_at_least(0.999), 1.0);
    }

    #[test]
    fn different_inits_underflow() {
        let a = TransformerLm::<f32>::init(LmConfig::toy(12), 1).unwrap();
        let b = TransformerLm::<f32>::init(LmConfig::toy(12), 2).unwrap();
        let d = weight_diff(&a, &b).unwrap();
        assert_eq!(d.value_hist.underflow, 4 * 256);
        let c = TransformerLm::<f32>::init(LmConfig::toy(13), 2).unwrap();
        assert!(weight_diff(&a, &c).is_err());
    }

    #[test]
    fn scaling_shows_in_activation_diff() {
        let m = TransformerLm::<f64>::init(LmConfig { max_seq: 8, ..LmConfig::toy(12) }, 1).unwrap();
        let id = ValueVectorId::new(0, 3);
        let spec = InterventionSpec::uniform([id], 2.0).unwrap();
        let d = activation_diff(&m, None, &m, Some(&spec), &[vec![0, 5, 6]], &[id]).unwrap();
        assert!((d[0].mean_b - 2.0 * d[0].mean_a).abs() < 1e-12);
        let same = activation_diff(&m, None, &m, None, &[vec![0, 5, 6]], &[id]).unwrap();
        assert_eq!(same[0].delta, 0.0);
    }
}
