// SPDX-License-Identifier: MIT OR Apache-2.0

mod align;
mod analyze;
mod data;

use std::path::Path;

use valuelens::data::corpus::parse_tsv;
use valuelens::data::{Checkpoint, LabeledSentence};
use valuelens::interpret::NegativeSet;
use valuelens::lm::Tokenizer;
use valuelens::ppo::EvalConfig;
use valuelens::reward::SentimentClassifier;
use valuelens::{Error, Lm};

use crate::args::{Command, SampleArgs};
use crate::error::{CliError, CliResult};
use crate::manifest::{sha256_hex, Run};

pub fn execute(command: &Command) -> CliResult<()> {
    let common = command.common();
    let mut run = Run::start(command.name(), &common.out, common.seed)?;
    match command {
        Command::GenCorpus(a) => data::gen_corpus(&mut run, a)?,
        Command::TrainLm(a) => data::train_lm(&mut run, a)?,
        Command::TrainClassifier(a) => data::train_classifier(&mut run, a)?,
        Command::TrainProbe(a) => analyze::train_probe(&mut run, a)?,
        Command::RankNegative(a) => analyze::rank_negative(&mut run, a)?,
        Command::ProjectValues(a) => analyze::project_values(&mut run, a)?,
        Command::LogitLens(a) => analyze::logit_lens(&mut run, a)?,
        Command::WeightDiff(a) => analyze::weight_diff(&mut run, a)?,
        Command::ActDiff(a) => analyze::act_diff(&mut run, a)?,
        Command::Ppo(a) => align::ppo(&mut run, a)?,
        Command::InterveneEval(a) => align::intervene_eval(&mut run, a)?,
        Command::EvalSentiment(a) => align::eval_sentiment(&mut run, a)?,
        Command::SweepLambda2(a) => align::sweep_lambda2(&mut run, a)?,
    }
    run.finish()?;
    Ok(())
}

fn checkpoint(run: &mut Run, path: &Path) -> CliResult<Checkpoint> {
    let bytes = run.read(path)?;
    Ok(Checkpoint::from_bytes(&bytes).map_err(Error::from)?)
}

fn load_lm(run: &mut Run, path: &Path) -> CliResult<(Lm, Tokenizer)> {
    Ok(Lm::from_checkpoint(&checkpoint(run, path)?)?)
}

/// The classifier must share the LM's vocabulary, since it scores LM token
/// ids directly.
fn load_classifier(run: &mut Run, path: &Path, lm_vocab: &Tokenizer) -> CliResult<SentimentClassifier<f32>> {
    let (clf, tok) = SentimentClassifier::<f32>::from_checkpoint(&checkpoint(run, path)?)?;
    if tok != *lm_vocab {
        return Err(Error::TokenizerMismatch(format!(
            "classifier vocabulary {} differs from the LM vocabulary {}",
            tok.hash(),
            lm_vocab.hash()
        ))
        .into());
    }
    Ok(clf)
}

/// Parsed sentences and the sha256 of the file.
fn load_corpus(run: &mut Run, path: &Path) -> CliResult<(Vec<LabeledSentence>, String)> {
    let text = run.read_text(path)?;
    let lines = parse_tsv(&text)?;
    if lines.is_empty() {
        return Err(CliError::Input(format!("{} holds no sentences", path.display())));
    }
    Ok((lines, sha256_hex(text.as_bytes())))
}

fn load_vocab(run: &mut Run, path: &Path) -> CliResult<Tokenizer> {
    Ok(Tokenizer::from_vocab_file(&run.read_text(path)?)?)
}

/// One prompt per non-empty line, as `<bos>` plus token ids, each at most
/// `max_len` tokens.
fn load_prompts(run: &mut Run, path: &Path, tok: &Tokenizer, max_len: usize) -> CliResult<Vec<Vec<usize>>> {
    let text = run.read_text(path)?;
    let mut prompts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ids = tok
            .encode_prompt(line)
            .map_err(|e| CliError::Input(format!("{} line {}: {e}", path.display(), i + 1)))?;
        if ids.len() > max_len {
            return Err(CliError::Input(format!(
                "{} line {}: prompt of {} tokens is longer than {max_len}",
                path.display(),
                i + 1,
                ids.len()
            )));
        }
        prompts.push(ids);
    }
    if prompts.is_empty() {
        return Err(CliError::Input(format!("{} holds no prompts", path.display())));
    }
    Ok(prompts)
}

fn load_negset(run: &mut Run, path: &Path, k: Option<usize>, model: &Lm) -> CliResult<NegativeSet> {
    let set: NegativeSet = serde_json::from_slice(&run.read(path)?).map_err(Error::from)?;
    let set = match k {
        Some(k) if k > set.len() => {
            return Err(CliError::Input(format!("--k {k} exceeds the {} entries in {}", set.len(), path.display())))
        }
        Some(k) => set.top(k),
        None => set,
    };
    if set.is_empty() {
        return Err(CliError::Input(format!("{} names no value vectors", path.display())));
    }
    for e in &set.entries {
        model.check_id(e.id())?;
    }
    Ok(set)
}

fn eval_config(s: &SampleArgs, seed: u64) -> EvalConfig {
    EvalConfig {
        max_new_tokens: s.max_new_tokens,
        temperature: s.temperature,
        samples_per_prompt: s.samples_per_prompt,
        seed,
    }
}
