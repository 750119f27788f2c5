// SPDX-License-Identifier: MIT OR Apache-2.0

use rayon::prelude::*;

use crate::data::{LabeledSentence, Sentiment};
use crate::error::{Error, Result};
use crate::lm::tokenizer::BOS;
use crate::lm::{Tokenizer, TransformerLm};
use crate::scalar::Scalar;

/// Mean over positions of the residual stream after the last block (before
/// the final normalization). Lives in the same space as the value vectors.
pub fn sentence_representation<T: Scalar>(model: &TransformerLm<T>, tokens: &[usize]) -> Result<Vec<T>> {
    if tokens.is_empty() {
        return Err(Error::InvalidArgument("sentence representation of an empty sequence".into()));
    }
    let (_, trace) = model.forward(tokens, None, true)?;
    let trace = trace.expect("capture requested");
    let resid = trace.final_residual();
    let d = resid.cols();
    let mut out = vec![T::zero(); d];
    for i in 0..resid.rows() {
        for (o, &v) in out.iter_mut().zip(resid.row(i)) {
            *o = *o + v;
        }
    }
    let n = T::of(resid.rows() as f64);
    Ok(out.into_iter().map(|v| v / n).collect())
}

/// Representations of the first `limit` sentences (each read as `<bos>`
/// plus its tokens), paired with their labels, as probe training data.
pub fn labeled_representations<T: Scalar>(
    model: &TransformerLm<T>,
    tokenizer: &Tokenizer,
    lines: &[LabeledSentence],
    limit: usize,
) -> Result<Vec<(Vec<f64>, Sentiment)>> {
    lines
        .par_iter()
        .take(limit)
        .map(|l| {
            let mut ids = vec![BOS];
            ids.extend(tokenizer.encode(&l.text));
            ids.truncate(model.config.max_seq);
            let rep = sentence_representation(model, &ids)?;
            Ok((rep.iter().map(|v| v.as_f64()).collect(), l.label))
        })
        .collect()
}
