// SPDX-License-Identifier: MIT OR Apache-2.0

//! Frozen sentiment classifier used as the PPO reward: token embeddings,
//! mean pooling, one linear unit and a sigmoid giving `P(positive)`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::autodiff::{sigmoid, Adam, AdamConfig, Tape};
use crate::data::{Checkpoint, LabeledSentence, Sentiment};
use crate::error::{Error, Result};
use crate::lm::model::tokenizer_from_metadata;
use crate::lm::train::split_heldout;
use crate::lm::Tokenizer;
use crate::scalar::Scalar;
use crate::tensor::{dot, Tensor};

const CLASSIFIER_KIND: &str = "classifier";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub heldout_fraction: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            epochs: 5,
            batch_size: 32,
            lr: 1e-2,
            seed: 0,
            heldout_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassifierReport {
    pub train_accuracy: f64,
    pub heldout_accuracy: f64,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SentimentClassifier<T> {
    /// `|V| × dim`.
    pub embedding: Tensor<T>,
    /// `1 × dim`.
    pub weight: Tensor<T>,
    /// `[1]`.
    pub bias: Tensor<T>,
}

impl<T: Scalar> SentimentClassifier<T> {
    pub fn init(vocab_size: usize, dim: usize, seed: u64) -> Result<Self> {
        if vocab_size == 0 || dim == 0 {
            return Err(Error::InvalidArgument("classifier needs a vocabulary and a width".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.1).expect("valid std");
        let mut draw = |shape: &[usize]| Tensor::from_fn(shape, |_| T::of(normal.sample(&mut rng)));
        Ok(Self {
            embedding: draw(&[vocab_size, dim]),
            weight: draw(&[1, dim]),
            bias: Tensor::zeros(&[1]),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    fn check(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("cannot score an empty sequence".into()));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.vocab_size()) {
            return Err(Error::Index(format!("token {bad} outside classifier vocabulary")));
        }
        Ok(())
    }

    pub fn logit(&self, tokens: &[usize]) -> Result<f64> {
        self.check(tokens)?;
        let dim = self.embedding.cols();
        let mut pooled = vec![T::zero(); dim];
        for &t in tokens {
            for (p, &e) in pooled.iter_mut().zip(self.embedding.row(t)) {
                *p = *p + e;
            }
        }
        let n = T::of(tokens.len() as f64);
        pooled.iter_mut().for_each(|p| *p = *p / n);
        Ok((dot(&pooled, self.weight.data()) + self.bias.item()).as_f64())
    }

    /// `P(positive | tokens)`. Pure: the same tokens always give the same
    /// score.
    pub fn score(&self, tokens: &[usize]) -> Result<f64> {
        Ok(sigmoid(self.logit(tokens)?))
    }

    pub fn to_checkpoint(&self, tokenizer: &Tokenizer, provenance: Value) -> Result<Checkpoint> {
        if tokenizer.len() != self.vocab_size() {
            return Err(Error::TokenizerMismatch(format!(
                "tokenizer has {} tokens, classifier vocabulary is {}",
                tokenizer.len(),
                self.vocab_size()
            )));
        }
        let mut ckpt = Checkpoint::new(json!({
            "kind": CLASSIFIER_KIND,
            "dim": self.embedding.cols(),
            "tokenizer_hash": tokenizer.hash(),
            "vocab": tokenizer.tokens(),
            "provenance": provenance,
        }));
        ckpt.insert("embedding", self.embedding.cast());
        ckpt.insert("head.weight", self.weight.cast());
        ckpt.insert("head.bias", self.bias.cast());
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, Tokenizer)> {
        if ckpt.meta_str("kind") != Some(CLASSIFIER_KIND) {
            return Err(Error::ArchitectureMismatch(format!(
                "expected a classifier checkpoint, found kind {:?}",
                ckpt.meta_str("kind")
            )));
        }
        let tokenizer = tokenizer_from_metadata(&ckpt.metadata)?;
        let embedding = ckpt.tensor("embedding")?.cast::<T>();
        let weight = ckpt.tensor("head.weight")?.cast::<T>();
        let bias = ckpt.tensor("head.bias")?.cast::<T>();
        let dim = embedding.cols();
        if embedding.shape() != [tokenizer.len(), dim] || weight.shape() != [1, dim] || bias.shape() != [1] {
            return Err(Error::ArchitectureMismatch("classifier tensor shapes disagree".into()));
        }
        Ok((Self { embedding, weight, bias }, tokenizer))
    }
}

fn label_value<T: Scalar>(s: Sentiment) -> T {
    match s {
        Sentiment::Positive => T::one(),
        Sentiment::Negative => T::zero(),
    }
}

fn batch_step<T: Scalar>(
    clf: &SentimentClassifier<T>,
    batch: &[&(Vec<usize>, Sentiment)],
) -> Result<(f64, Vec<Option<Tensor<T>>>)> {
    let mut tape = Tape::new();
    let emb = tape.param(&clf.embedding);
    let w = tape.param(&clf.weight);
    let b = tape.param(&clf.bias);
    let mut flat = Vec::new();
    let mut segments = Vec::with_capacity(batch.len());
    for (tokens, _) in batch {
        segments.push((flat.len(), tokens.len()));
        flat.extend_from_slice(tokens);
    }
    let rows = tape.gather_rows(emb, &flat)?;
    let pooled = tape.segment_mean(rows, &segments)?;
    let z = tape.matmul_t(pooled, w)?;
    let z = tape.add_row(z, b)?;
    let labels: Vec<T> = batch.iter().map(|(_, l)| label_value(*l)).collect();
    let loss = tape.bce_with_logits(z, &labels)?;
    let value = tape.value(loss).item().as_f64();
    let g = tape.backward(loss)?;
    Ok((value, [emb, w, b].iter().map(|v| g.get(*v).cloned()).collect()))
}

/// Fit the classifier on labeled sentences (tokenized without BOS/EOS).
pub fn train_classifier<T: Scalar>(
    tokenizer: &Tokenizer,
    data: &[LabeledSentence],
    config: &ClassifierConfig,
) -> Result<(SentimentClassifier<T>, ClassifierReport)> {
    let encoded: Vec<(Vec<usize>, Sentiment)> = data
        .iter()
        .map(|s| (tokenizer.encode(&s.text), s.label))
        .filter(|(t, _)| !t.is_empty())
        .collect();
    let (train, heldout) = split_heldout(&encoded, config.heldout_fraction, config.seed);
    if config.batch_size == 0 || train.len() < config.batch_size {
        return Err(Error::InvalidArgument(format!(
            "{} training sentences is fewer than one batch of {}",
            train.len(),
            config.batch_size
        )));
    }
    let mut clf = SentimentClassifier::init(tokenizer.len(), config.dim, config.seed)?;
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut final_loss = f64::NAN;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks_exact(config.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = batch_step(&clf, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("classifier loss became {loss}")));
            }
            final_loss = loss;
            let refs: Vec<_> = grads.iter().map(Option::as_ref).collect();
            adam.step(&mut [&mut clf.embedding, &mut clf.weight, &mut clf.bias], &refs)?;
        }
    }
    let accuracy = |set: &[(Vec<usize>, Sentiment)]| -> Result<f64> {
        if set.is_empty() {
            return Ok(f64::NAN);
        }
        let mut hits = 0;
        for (t, l) in set {
            let positive = clf.score(t)? > 0.5;
            hits += usize::from(positive == (*l == Sentiment::Positive));
        }
        Ok(hits as f64 / set.len() as f64)
    };
    let report = ClassifierReport {
        train_accuracy: accuracy(&train)?,
        heldout_accuracy: accuracy(&heldout)?,
        final_loss,
    };
    Ok((clf, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_corpus, TemplateConfig};
    use crate::lm::tokenizer::PAD;

    #[test]
    fn pad_only_input_is_neutral_at_init() {
        let c = SentimentClassifier::<f32>::init(50, 32, 0).unwrap();
        let s = c.score(&[PAD; 7]).unwrap();
        assert!((s - 0.5).abs() <= 0.1, "{s}");
        assert!(c.score(&[]).is_err());
        assert!(c.score(&[50]).is_err());
    }

    #[test]
    fn learns_the_synthetic_corpus() {
        let corpus = generate_corpus(1, 600, &TemplateConfig::default()).unwrap();
        let tok = Tokenizer::build(corpus.sentences(), 1).unwrap();
        let (clf, report) = train_classifier::<f32>(&tok, &corpus.lines, &ClassifierConfig::default()).unwrap();
        assert!(report.heldout_accuracy >= 0.95, "{report:?}");
        let good = clf.score(&tok.encode("the film was wonderful and superb .")).unwrap();
        let bad = clf.score(&tok.encode("the film was awful and dull .")).unwrap();
        assert!(good > 0.8 && bad < 0.2, "{good} {bad}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let tok = Tokenizer::build(["a b c"], 1).unwrap();
        let c = SentimentClassifier::<f32>::init(tok.len(), 4, 3).unwrap();
        let ck = c.to_checkpoint(&tok, json!({})).unwrap();
        let (back, t2) = SentimentClassifier::<f32>::from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(t2, tok);
    }
}
