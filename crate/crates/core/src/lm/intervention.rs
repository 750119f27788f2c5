// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::model::LmConfig;
use crate::lm::ValueVectorId;
use crate::scalar::Scalar;

/// Coefficient multipliers: during a forward pass every listed coefficient
/// `m_i` is replaced by `alpha · m_i`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InterventionSpec {
    entries: Vec<(ValueVectorId, f64)>,
}

impl InterventionSpec {
    pub fn new(entries: Vec<(ValueVectorId, f64)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (id, alpha) in &entries {
            if !alpha.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite alpha for {id}")));
            }
            if !seen.insert(*id) {
                return Err(Error::InvalidArgument(format!("duplicate intervention on {id}")));
            }
        }
        Ok(Self { entries })
    }

    /// The same `alpha` on every id.
    pub fn uniform(ids: impl IntoIterator<Item = ValueVectorId>, alpha: f64) -> Result<Self> {
        Self::new(ids.into_iter().map(|id| (id, alpha)).collect())
    }

    pub fn entries(&self) -> &[(ValueVectorId, f64)] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Per-layer column factors; `None` for layers without entries.
    pub fn layer_factors<T: Scalar>(&self, config: &LmConfig) -> Result<Vec<Option<Vec<T>>>> {
        let mut out: Vec<Option<Vec<T>>> = vec![None; config.n_layers];
        for (id, alpha) in &self.entries {
            if id.layer >= config.n_layers || id.index >= config.d_mlp {
                return Err(Error::Index(format!(
                    "intervention target {id} out of range for {} layers x {} neurons",
                    config.n_layers, config.d_mlp
                )));
            }
            let f = out[id.layer].get_or_insert_with(|| vec![T::one(); config.d_mlp]);
            f[id.index] = T::of(*alpha);
        }
        Ok(out)
    }
}
