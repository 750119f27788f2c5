// SPDX-License-Identifier: MIT OR Apache-2.0

use serde::Serialize;

use crate::error::Result;
use crate::lm::{Tokenizer, TransformerLm, ValueVectorId};
use crate::scalar::Scalar;
use crate::tensor::dot;

/// Tokens whose (tied) embeddings have the largest inner product with a
/// value vector.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VocabProjection {
    pub id: ValueVectorId,
    /// `(token, score)` by descending score.
    pub top: Vec<(String, f64)>,
}

/// Project a value vector onto the vocabulary: scores are `E · v`. Ties
/// go to the smaller token id.
pub fn project_values<T: Scalar>(
    model: &TransformerLm<T>,
    tokenizer: &Tokenizer,
    id: ValueVectorId,
    top_n: usize,
) -> Result<VocabProjection> {
    let v = model.value_vector(id)?;
    let mut scored: Vec<(usize, f64)> = (0..model.config.vocab_size)
        .map(|w| (w, dot(model.embedding.row(w), v).as_f64()))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(top_n);
    Ok(VocabProjection {
        id,
        top: scored
            .into_iter()
            .map(|(w, s)| (tokenizer.token(w).unwrap_or("<unk>").to_string(), s))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::LmConfig;

    #[test]
    fn aligned_token_wins() {
        let tok = Tokenizer::build(["alpha beta gamma delta"], 1).unwrap();
        let mut m = TransformerLm::<f64>::init(LmConfig::toy(tok.len()), 1).unwrap();
        let target = tok.id("gamma").unwrap();
        let e = m.embedding.row(target).to_vec();
        m.blocks[1].mlp_values.row_mut(9).copy_from_slice(&e);
        let p = project_values(&m, &tok, ValueVectorId::new(1, 9), 3).unwrap();
        assert_eq!(p.top.len(), 3);
        assert_eq!(p.top[0].0, "gamma");
        assert!(project_values(&m, &tok, ValueVectorId::new(4, 0), 3).is_err());
    }
}
