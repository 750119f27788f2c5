// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::lm::{TransformerLm, ValueVectorId};
use crate::scalar::Scalar;
use crate::tensor::cosine;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegativeEntry {
    pub layer: usize,
    pub index: usize,
    pub cosine: f64,
}

impl NegativeEntry {
    pub fn id(&self) -> ValueVectorId {
        ValueVectorId::new(self.layer, self.index)
    }
}

/// Value vectors ordered by descending cosine with the probe direction.
/// Serialized as a bare JSON list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NegativeSet {
    pub entries: Vec<NegativeEntry>,
}

impl NegativeSet {
    pub fn ids(&self) -> Vec<ValueVectorId> {
        self.entries.iter().map(NegativeEntry::id).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The first `k` entries.
    pub fn top(&self, k: usize) -> NegativeSet {
        NegativeSet {
            entries: self.entries[..k.min(self.entries.len())].to_vec(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// The `k` value vectors with the largest cosine to `w_neg`. Ties go to
/// the smaller `(layer, index)`.
pub fn rank_negative_vectors<T: Scalar>(model: &TransformerLm<T>, w_neg: &[f64], k: usize) -> Result<NegativeSet> {
    let d = model.config.d_model;
    if w_neg.len() != d {
        return Err(Error::Shape(format!("probe has {} dims, model width is {d}", w_neg.len())));
    }
    let total = model.config.value_vector_count();
    if k == 0 || k > total {
        return Err(Error::InvalidArgument(format!("k must be in 1..={total}, got {k}")));
    }
    let mut entries = Vec::with_capacity(total);
    for (layer, block) in model.blocks.iter().enumerate() {
        for index in 0..model.config.d_mlp {
            let v: Vec<f64> = block.mlp_values.row(index).iter().map(|x| x.as_f64()).collect();
            entries.push(NegativeEntry {
                layer,
                index,
                cosine: cosine(&v, w_neg),
            });
        }
    }
    entries.sort_by(|a, b| {
        b.cosine
            .total_cmp(&a.cosine)
            .then_with(|| (a.layer, a.index).cmp(&(b.layer, b.index)))
    });
    entries.truncate(k);
    Ok(NegativeSet { entries })
}
