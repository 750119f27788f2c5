// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::HashMap;

use valuelens::data::corpus::NEGATIVE_WORDS;
use valuelens::data::{generate_corpus, Sentiment, TemplateConfig};
use valuelens::interpret::logit_lens;
use valuelens::lm::train::{encode_sequences, split_heldout};
use valuelens::lm::{train_lm, LmConfig, LmTrainConfig, Tokenizer};
use valuelens::ppo::{ppo_train, PpoConfig};
use valuelens::reward::{train_classifier, ClassifierConfig};
use valuelens::Lm;

/// Heldout perplexity of add-one-smoothed unigram counts from the training
/// split, predicting every token after BOS.
fn unigram_perplexity(train: &[Vec<usize>], heldout: &[Vec<usize>], vocab: usize) -> f64 {
    let mut counts: HashMap<usize, f64> = HashMap::new();
    let mut total = 0.0;
    for s in train {
        for &t in &s[1..] {
            *counts.entry(t).or_default() += 1.0;
            total += 1.0;
        }
    }
    let mut nll = 0.0;
    let mut n = 0.0;
    for s in heldout {
        for &t in &s[1..] {
            let p = (counts.get(&t).copied().unwrap_or(0.0) + 1.0) / (total + vocab as f64);
            nll -= p.ln();
            n += 1.0;
        }
    }
    (nll / n).exp()
}

#[test]
fn two_layer_model_beats_unigram_baseline() {
    let corpus = generate_corpus(1, 600, &TemplateConfig::default()).unwrap();
    let tok = Tokenizer::build(corpus.sentences(), 1).unwrap();
    let config = LmConfig { n_layers: 2, max_seq: 24, ..LmConfig::toy(tok.len()) };
    let mut model = Lm::init(config, 0).unwrap();
    let sentences: Vec<&str> = corpus.sentences().collect();
    let train_cfg = LmTrainConfig { epochs: 2, warmup_steps: 20, ..LmTrainConfig::default() };
    let report = train_lm(&mut model, &tok, &sentences, &train_cfg, |_, _| Ok(())).unwrap();

    let seqs = encode_sequences(&tok, &sentences);
    let (train, heldout) = split_heldout(&seqs, train_cfg.heldout_fraction, train_cfg.seed);
    let unigram = unigram_perplexity(&train, &heldout, tok.len());
    assert!(
        report.heldout_perplexity < unigram,
        "lm {} vs unigram {unigram}",
        report.heldout_perplexity
    );
    let first = report.loss_curve.first().unwrap().1;
    assert!((first / (tok.len() as f64).ln() - 1.0).abs() <= 0.05, "initial loss {first}");
}

#[test]
fn classifier_separates_planted_sentences() {
    let corpus = generate_corpus(2, 2000, &TemplateConfig::default()).unwrap();
    let tok = Tokenizer::build(corpus.sentences(), 1).unwrap();
    let (clf, report) = train_classifier::<f32>(&tok, &corpus.lines, &ClassifierConfig::default()).unwrap();
    assert!(report.heldout_accuracy >= 0.95, "{report:?}");
    let score = |s: &str| clf.score(&tok.encode(s)).unwrap();
    assert!(score("the film was wonderful and brilliant .") > 0.9);
    assert!(score("the film was awful and tedious .") < 0.1);
    let pos = corpus.lines.iter().filter(|l| l.label == Sentiment::Positive).count();
    assert_eq!(pos * 2, corpus.lines.len());
}

#[test]
fn alignment_lowers_negative_words_at_the_last_layer() {
    let corpus = generate_corpus(3, 1500, &TemplateConfig::default()).unwrap();
    let tok = Tokenizer::build(corpus.sentences(), 1).unwrap();
    let config = LmConfig { n_layers: 2, max_seq: 24, ..LmConfig::toy(tok.len()) };
    let mut lm = Lm::init(config, 0).unwrap();
    let sentences: Vec<&str> = corpus.sentences().collect();
    let train_cfg = LmTrainConfig { epochs: 4, warmup_steps: 50, ..LmTrainConfig::default() };
    train_lm(&mut lm, &tok, &sentences, &train_cfg, |_, _| Ok(())).unwrap();
    let (clf, _) = train_classifier::<f32>(&tok, &corpus.lines, &ClassifierConfig::default()).unwrap();
    let prompts: Vec<Vec<usize>> = corpus.prompts.iter().map(|p| tok.encode_prompt(p).unwrap()).collect();
    let mut policy = lm.clone();
    ppo_train(&mut policy, &lm, &clf, &prompts, &PpoConfig::default(), None, |_, _| Ok(())).unwrap();

    let targets: Vec<usize> = NEGATIVE_WORDS.iter().filter_map(|w| tok.id(w)).collect();
    let negative: Vec<Vec<usize>> = corpus.negative_prompts.iter().map(|p| tok.encode_prompt(p).unwrap()).collect();
    let mass = |m: &Lm| {
        let mut total = 0.0;
        for p in &negative {
            for &t in &targets {
                total += *logit_lens(m, p, p.len() - 1, t, None).unwrap().probs.last().unwrap();
            }
        }
        total / negative.len() as f64
    };
    let (before, after) = (mass(&lm), mass(&policy));
    assert!(after < before, "negative mass {before} -> {after}");
}
