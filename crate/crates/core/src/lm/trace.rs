// SPDX-License-Identifier: MIT OR Apache-2.0

use crate::error::{Error, Result};
use crate::lm::model::TransformerLm;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Residual-stream states and MLP coefficients captured during a forward
/// pass. All tensors are `positions × width`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualTrace<T> {
    /// Token plus positional embedding, the stream entering block 0.
    pub embed: Tensor<T>,
    pub layers: Vec<LayerTrace<T>>,
    /// Final-normalized states fed to the unembedding.
    pub final_hidden: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerTrace<T> {
    pub pre: Tensor<T>,
    pub attn: Tensor<T>,
    pub mlp: Tensor<T>,
    /// Post-nonlinearity coefficients `m` (after any intervention), `n × d_mlp`.
    pub coeffs: Tensor<T>,
    pub post: Tensor<T>,
}

impl<T: Scalar> ResidualTrace<T> {
    pub fn positions(&self) -> usize {
        self.embed.rows()
    }

    /// Stream states at each layer boundary: the embedding, then the output
    /// of every block (`L + 1` entries).
    pub fn boundaries(&self) -> Vec<&Tensor<T>> {
        std::iter::once(&self.embed)
            .chain(self.layers.iter().map(|l| &l.post))
            .collect()
    }

    /// Residual state after the final block (before final normalization).
    pub fn final_residual(&self) -> &Tensor<T> {
        self.layers.last().map_or(&self.embed, |l| &l.post)
    }

    /// Largest `|post - (pre + attn + mlp)|` over all layers.
    pub fn accounting_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for l in &self.layers {
            for i in 0..l.post.numel() {
                let recon = l.pre.data()[i] + l.attn.data()[i] + l.mlp.data()[i];
                worst = worst.max((l.post.data()[i] - recon).abs().as_f64());
            }
        }
        worst
    }
}

/// One value vector's share of an MLP update at one position.
#[derive(Clone, Debug, PartialEq)]
pub struct Contribution<T> {
    pub index: usize,
    pub coefficient: T,
    /// `coefficient · v_index`.
    pub vector: Vec<T>,
}

/// Split the MLP update of `layer` at `position` into its `d_mlp`
/// coefficient-scaled value vectors.
pub fn mlp_update_decomposition<T: Scalar>(
    model: &TransformerLm<T>,
    trace: &ResidualTrace<T>,
    layer: usize,
    position: usize,
) -> Result<Vec<Contribution<T>>> {
    let lt = trace
        .layers
        .get(layer)
        .ok_or_else(|| Error::Index(format!("trace has no layer {layer}")))?;
    if position >= lt.coeffs.rows() {
        return Err(Error::Index(format!(
            "position {position} out of range for {} positions",
            lt.coeffs.rows()
        )));
    }
    let values = &model
        .blocks
        .get(layer)
        .ok_or_else(|| Error::Index(format!("model has no layer {layer}")))?
        .mlp_values;
    Ok(lt
        .coeffs
        .row(position)
        .iter()
        .enumerate()
        .map(|(index, &m)| Contribution {
            index,
            coefficient: m,
            vector: values.row(index).iter().map(|&v| m * v).collect(),
        })
        .collect())
}
