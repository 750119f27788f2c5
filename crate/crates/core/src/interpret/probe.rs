// SPDX-License-Identifier: MIT OR Apache-2.0

//! Logistic-regression probe separating negative from positive sentence
//! representations.
//!
//! Representations are centered and divided by their overall RMS spread
//! before fitting, so the fit is unchanged by a global rescaling. Features
//! keep their relative scale: per-feature standardization would inflate
//! low-variance residual directions and tilt the probe toward them. The
//! reported direction is the hyperplane normal in the original space.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::sigmoid;
use crate::data::checkpoint::write_atomic;
use crate::data::Sentiment;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub iterations: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            lr: 0.5,
            l2: 1e-4,
        }
    }
}

/// Unit normal `w_neg` of the probe hyperplane: `w_neg · x + bias > 0`
/// predicts negative sentiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeDirection {
    pub dim: usize,
    pub w_neg: Vec<f64>,
    pub bias: f64,
    #[serde(rename = "train_acc")]
    pub train_accuracy: f64,
    #[serde(rename = "heldout_acc")]
    pub heldout_accuracy: f64,
}

impl ProbeDirection {
    pub fn predict(&self, x: &[f64]) -> Sentiment {
        let s: f64 = self.w_neg.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.bias;
        if s > 0.0 {
            Sentiment::Negative
        } else {
            Sentiment::Positive
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let p: Self = serde_json::from_str(&text)?;
        if p.w_neg.len() != p.dim {
            return Err(Error::InvalidArgument(format!(
                "probe dim {} but w_neg has {} entries",
                p.dim,
                p.w_neg.len()
            )));
        }
        Ok(p)
    }
}

/// Heldout membership depends only on the representation's direction, so
/// duplicates, rescaled copies and relabeled copies land on the same side.
fn is_heldout(x: &[f64]) -> bool {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for v in x {
        let unit = if norm > 0.0 { v / norm } else { *v };
        feed(&unit.to_bits().to_le_bytes());
    }
    h.is_multiple_of(10)
}

pub fn train_probe(reps: &[(Vec<f64>, Sentiment)], config: &ProbeConfig) -> Result<ProbeDirection> {
    let dim = reps
        .first()
        .map(|(x, _)| x.len())
        .ok_or_else(|| Error::InvalidArgument("probe needs representations".into()))?;
    if dim == 0 || reps.iter().any(|(x, _)| x.len() != dim) {
        return Err(Error::Shape("probe representations must share a non-zero width".into()));
    }
    if !reps.iter().any(|r| r.1 == Sentiment::Negative) || !reps.iter().any(|r| r.1 == Sentiment::Positive) {
        return Err(Error::InvalidArgument("probe needs both negative and positive examples".into()));
    }
    let (mut train, mut held): (Vec<_>, Vec<_>) = reps.iter().partition(|(x, _)| !is_heldout(x));
    if held.is_empty() || train.is_empty() {
        // tiny inputs: fall back to every tenth example
        train = reps.iter().enumerate().filter(|(i, _)| i % 10 != 9).map(|(_, r)| r).collect();
        held = reps.iter().enumerate().filter(|(i, _)| i % 10 == 9).map(|(_, r)| r).collect();
        if held.is_empty() {
            held = train.clone();
        }
    }

    let n = train.len() as f64;
    let mut mean = vec![0.0; dim];
    for (x, _) in &train {
        mean.iter_mut().zip(x).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = 0.0;
    for (x, _) in &train {
        var += x.iter().zip(&mean).map(|(v, m)| (v - m) * (v - m)).sum::<f64>();
    }
    let scale = (var / (n * dim as f64)).sqrt();
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let z: Vec<(Vec<f64>, f64)> = train
        .iter()
        .map(|(x, l)| {
            let zx = x.iter().zip(&mean).map(|(v, m)| (v - m) / scale).collect();
            (zx, if *l == Sentiment::Negative { 1.0 } else { 0.0 })
        })
        .collect();

    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut gw = vec![0.0; dim];
    for _ in 0..config.iterations {
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        for (x, y) in &z {
            let p = sigmoid(w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b);
            let r = p - y;
            gw.iter_mut().zip(x).for_each(|(g, v)| *g += r * v);
            gb += r;
        }
        for (wi, gi) in w.iter_mut().zip(&gw) {
            *wi -= config.lr * (gi / n + config.l2 * *wi);
        }
        b -= config.lr * gb / n;
    }

    // Σ_j w_j (x_j - mean_j) / scale + b  ==  u·x + c  with u = w / scale
    let u: Vec<f64> = w.iter().map(|a| a / scale).collect();
    let c = b - u.iter().zip(&mean).map(|(a, m)| a * m).sum::<f64>();
    let un = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if un == 0.0 || !un.is_finite() {
        return Err(Error::NonFinite("probe weight collapsed".into()));
    }
    let mut probe = ProbeDirection {
        dim,
        w_neg: u.iter().map(|v| v / un).collect(),
        bias: c / un,
        train_accuracy: 0.0,
        heldout_accuracy: 0.0,
    };
    let acc = |set: &[&(Vec<f64>, Sentiment)]| {
        set.iter().filter(|(x, l)| probe.predict(x) == *l).count() as f64 / set.len() as f64
    };
    let (tr, he) = (acc(&train), acc(&held));
    probe.train_accuracy = tr;
    probe.heldout_accuracy = he;
    Ok(probe)
}
