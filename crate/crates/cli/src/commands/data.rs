// SPDX-License-Identifier: MIT OR Apache-2.0

use serde_json::json;
use valuelens::data::corpus::LEXICON_VERSION;
use valuelens::data::{generate_corpus, TemplateConfig};
use valuelens::lm::{train_lm as fit_lm, LmConfig, LmTrainConfig, Tokenizer};
use valuelens::reward::{train_classifier as fit_classifier, ClassifierConfig};
use valuelens::Lm;

use super::{load_corpus, load_vocab};
use crate::args::{GenCorpusArgs, TrainClassifierArgs, TrainLmArgs};
use crate::cells;
use crate::error::CliResult;
use crate::manifest::Run;
use crate::report::{pretty_json, Csv};

fn lines_bytes(lines: &[String]) -> Vec<u8> {
    lines.iter().flat_map(|l| format!("{l}\n").into_bytes()).collect()
}

pub fn gen_corpus(run: &mut Run, a: &GenCorpusArgs) -> CliResult<()> {
    let templates = TemplateConfig::default();
    run.set_config(json!({
        "sentences": a.sentences,
        "lexicon_version": LEXICON_VERSION,
        "heldout_every": templates.heldout_every,
    }));
    let corpus = generate_corpus(a.common.seed, a.sentences, &templates)?;
    let vocab = Tokenizer::build(corpus.sentences(), 1)?;
    run.write("corpus.tsv", corpus.to_tsv().as_bytes())?;
    run.write("prompts.txt", &lines_bytes(&corpus.prompts))?;
    run.write("prompts_heldout.txt", &lines_bytes(&corpus.heldout_prompts))?;
    run.write("prompts_negative.txt", &lines_bytes(&corpus.negative_prompts))?;
    run.write("vocab.txt", vocab.to_vocab_file().as_bytes())?;
    Ok(())
}

pub fn train_lm(run: &mut Run, a: &TrainLmArgs) -> CliResult<()> {
    let (lines, corpus_hash) = load_corpus(run, &a.corpus)?;
    let tok = match &a.vocab {
        Some(p) => load_vocab(run, p)?,
        None => Tokenizer::build(lines.iter().map(|l| l.text.as_str()), 1)?,
    };
    let config = LmConfig {
        vocab_size: tok.len(),
        d_model: a.d_model,
        n_layers: a.layers,
        n_heads: a.heads,
        d_mlp: a.d_mlp.unwrap_or(4 * a.d_model),
        max_seq: a.max_seq,
    };
    let train = LmTrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        warmup_steps: a.warmup_steps,
        seed: a.common.seed,
        eval_every: 0,
        heldout_fraction: a.heldout_fraction,
    };
    run.set_config(json!({"model": config, "train": train}));
    let mut model = Lm::init(config, a.common.seed)?;
    let sentences: Vec<&str> = lines.iter().map(|l| l.text.as_str()).collect();
    let report = fit_lm(&mut model, &tok, &sentences, &train, |_, _| Ok(()))?;

    let provenance = json!({"command": "train-lm", "seed": a.common.seed, "corpus_sha256": corpus_hash, "train": train});
    let ckpt = model.to_checkpoint(&tok, provenance)?;
    run.write("lm.mchk", &ckpt.to_bytes()?)?;
    let mut csv = Csv::new(&["step", "loss"]);
    for (step, loss) in &report.loss_curve {
        csv.row(cells![step, loss]);
    }
    run.write("lm_loss.csv", &csv.into_bytes())?;
    run.write(
        "lm_report.json",
        &pretty_json(&json!({
            "heldout_perplexity": report.heldout_perplexity,
            "train_sequences": report.train_sequences,
            "heldout_sequences": report.heldout_sequences,
            "parameters": model.parameter_count(),
        })),
    )?;
    Ok(())
}

pub fn train_classifier(run: &mut Run, a: &TrainClassifierArgs) -> CliResult<()> {
    let (lines, _) = load_corpus(run, &a.corpus)?;
    let tok = match &a.vocab {
        Some(p) => load_vocab(run, p)?,
        None => Tokenizer::build(lines.iter().map(|l| l.text.as_str()), 1)?,
    };
    let config = ClassifierConfig {
        dim: a.dim,
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.common.seed,
        heldout_fraction: a.heldout_fraction,
    };
    run.set_config(json!(config));
    let (clf, report) = fit_classifier::<f32>(&tok, &lines, &config)?;
    let ckpt = clf.to_checkpoint(&tok, json!({"command": "train-classifier", "config": config}))?;
    run.write("classifier.mchk", &ckpt.to_bytes()?)?;
    run.write("classifier_report.json", &pretty_json(&report))?;
    Ok(())
}
