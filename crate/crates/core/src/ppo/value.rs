// SPDX-License-Identifier: MIT OR Apache-2.0

use crate::autodiff::{Adam, AdamConfig, Tape};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{dot, Tensor};

/// Linear value estimate on the policy's final hidden states. The states
/// are treated as fixed features, so value training never touches the
/// policy weights.
#[derive(Clone, Debug)]
pub struct ValueHead<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    adam: Adam<T>,
}

impl<T: Scalar> ValueHead<T> {
    /// Zero-initialized, so every first estimate is 0.
    pub fn new(d_model: usize, lr: f64) -> Self {
        Self {
            weight: Tensor::zeros(&[1, d_model]),
            bias: Tensor::zeros(&[1]),
            adam: Adam::new(AdamConfig::with_lr(lr)),
        }
    }

    pub fn predict(&self, hidden: &Tensor<T>) -> Vec<f64> {
        (0..hidden.rows())
            .map(|i| (dot(hidden.row(i), self.weight.data()) + self.bias.item()).as_f64())
            .collect()
    }

    /// One Adam step on `0.5 · mean (V(h) - target)²`; returns the loss.
    pub fn fit_step(&mut self, hidden: &[&Tensor<T>], targets: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        let parts: Vec<_> = hidden.iter().map(|h| tape.constant_ref(h)).collect();
        let x = tape.concat(&parts)?;
        let pred = tape.matmul_t(x, w)?;
        let pred = tape.add_row(pred, b)?;
        let t: Vec<T> = targets.iter().map(|&v| T::of(v)).collect();
        let loss = tape.mse(pred, &t)?;
        let value = tape.value(loss).item().as_f64();
        let g = tape.backward(loss)?;
        let (gw, gb) = (g.get(w).cloned(), g.get(b).cloned());
        self.adam
            .step(&mut [&mut self.weight, &mut self.bias], &[gw.as_ref(), gb.as_ref()])?;
        Ok(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fits_a_linear_target() {
        let mut head = ValueHead::<f64>::new(2, 0.05);
        let h = Tensor::matrix(4, 2, vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0, -1.0, 0.5]).unwrap();
        let targets: Vec<f64> = (0..4).map(|i| 2.0 * h.row(i)[0] - h.row(i)[1] + 0.5).collect();
        assert_eq!(head.predict(&h), vec![0.0; 4]);
        let first = head.fit_step(&[&h], &targets).unwrap();
        let mut last = first;
        for _ in 0..2000 {
            last = head.fit_step(&[&h], &targets).unwrap();
        }
        assert!(last < first * 1e-4, "{first} -> {last}");
    }
}
