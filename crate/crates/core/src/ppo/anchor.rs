// SPDX-License-Identifier: MIT OR Apache-2.0

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::lm::{LmVars, TransformerLm, ValueVectorId};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Rewards movement of selected value vectors away from a snapshot:
/// `bonus = λ₂ Σ_{i∈N} min(‖v_i - v_i⁰‖, δ_max)`. As a loss term it
/// enters with a minus sign, and only the rows in `N` receive gradient.
#[derive(Clone, Debug)]
pub struct AnchorRegularizer<T> {
    pub lambda2: f64,
    pub cap: f64,
    ids: Vec<ValueVectorId>,
    /// Per layer: selected rows and their flattened snapshot.
    by_layer: Vec<(Vec<usize>, Vec<T>)>,
}

impl<T: Scalar> AnchorRegularizer<T> {
    pub fn new(model: &TransformerLm<T>, ids: &[ValueVectorId], lambda2: f64, cap: f64) -> Result<Self> {
        if !(lambda2 >= 0.0) || !(cap > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "anchor needs lambda2 >= 0 and cap > 0, got {lambda2} and {cap}"
            )));
        }
        let mut sorted = ids.to_vec();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != ids.len() {
            return Err(Error::InvalidArgument("anchor set repeats a value vector".into()));
        }
        let mut by_layer = vec![(Vec::new(), Vec::new()); model.config.n_layers];
        for &id in ids {
            let v = model.value_vector(id)?;
            by_layer[id.layer].0.push(id.index);
            by_layer[id.layer].1.extend_from_slice(v);
        }
        Ok(Self {
            lambda2,
            cap,
            ids: ids.to_vec(),
            by_layer,
        })
    }

    pub fn ids(&self) -> &[ValueVectorId] {
        &self.ids
    }

    /// Uncapped `‖v_i - v_i⁰‖` in the order of [`Self::ids`].
    pub fn distances(&self, model: &TransformerLm<T>) -> Result<Vec<f64>> {
        let d = model.config.d_model;
        self.ids
            .iter()
            .map(|&id| {
                let (rows, snap) = &self.by_layer[id.layer];
                let k = rows.iter().position(|&r| r == id.index).expect("id was registered");
                let now = model.value_vector(id)?;
                Ok(now
                    .iter()
                    .zip(&snap[k * d..(k + 1) * d])
                    .map(|(a, b)| (*a - *b).as_f64().powi(2))
                    .sum::<f64>()
                    .sqrt())
            })
            .collect()
    }

    pub fn mean_distance(&self, model: &TransformerLm<T>) -> Result<f64> {
        let d = self.distances(model)?;
        Ok(if d.is_empty() { 0.0 } else { d.iter().sum::<f64>() / d.len() as f64 })
    }

    pub fn bonus(&self, model: &TransformerLm<T>) -> Result<f64> {
        let d = self.distances(model)?;
        Ok(self.lambda2 * d.iter().map(|x| x.min(self.cap)).sum::<f64>())
    }

    /// Record `-bonus` on the tape. `None` when λ₂ is 0 or the set is
    /// empty, so a disabled anchor leaves the tape untouched.
    pub fn loss_term(&self, tape: &mut Tape<'_, T>, vars: &LmVars) -> Result<Option<Var>> {
        if self.lambda2 == 0.0 || self.ids.is_empty() {
            return Ok(None);
        }
        let mut total = None;
        for (l, (rows, snap)) in self.by_layer.iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let dist = tape.anchor_distance(vars.blocks[l].values, rows, snap, T::of(self.cap))?;
            total = Some(match total {
                None => dist,
                Some(t) => tape.add(t, dist)?,
            });
        }
        Ok(total.map(|t| tape.scale(t, T::of(-self.lambda2))))
    }

    /// Snapshot rows of one layer as a tensor (`|N_l| × d`), for reports.
    pub fn snapshot(&self, layer: usize, d_model: usize) -> Option<Tensor<T>> {
        let (rows, snap) = self.by_layer.get(layer)?;
        (!rows.is_empty()).then(|| Tensor::matrix(rows.len(), d_model, snap.clone()).expect("consistent snapshot"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::LmConfig;

    #[test]
    fn distances_track_edits() {
        let mut m = TransformerLm::<f64>::init(LmConfig::toy(10), 1).unwrap();
        let ids = [ValueVectorId::new(1, 4), ValueVectorId::new(3, 0)];
        let a = AnchorRegularizer::new(&m, &ids, 0.5, 1.0).unwrap();
        assert_eq!(a.distances(&m).unwrap(), vec![0.0, 0.0]);
        m.blocks[3].mlp_values.row_mut(0)[2] += 3.0;
        assert_eq!(a.distances(&m).unwrap(), vec![0.0, 3.0]);
        assert_eq!(a.bonus(&m).unwrap(), 0.5);
        assert!(AnchorRegularizer::new(&m, &[ids[0], ids[0]], 0.5, 1.0).is_err());
        assert!(AnchorRegularizer::new(&m, &[ValueVectorId::new(9, 0)], 0.5, 1.0).is_err());
    }

    #[test]
    fn disabled_anchor_records_nothing() {
        let m = TransformerLm::<f64>::init(LmConfig::toy(10), 1).unwrap();
        let a = AnchorRegularizer::new(&m, &[ValueVectorId::new(0, 0)], 0.0, 1.0).unwrap();
        let mut tape = Tape::new();
        let vars = m.bind(&mut tape, true);
        let before = tape.len();
        assert!(a.loss_term(&mut tape, &vars).unwrap().is_none());
        assert_eq!(tape.len(), before);
    }
}
