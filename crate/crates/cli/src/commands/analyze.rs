// SPDX-License-Identifier: MIT OR Apache-2.0

use serde_json::json;
use valuelens::data::corpus::NEGATIVE_WORDS;
use valuelens::interpret::lens::lens_distributions;
use valuelens::interpret::{self, labeled_representations, ProbeConfig, ProbeDirection};
use valuelens::lm::Tokenizer;
use valuelens::{Error, Lm};

use super::{load_corpus, load_lm, load_negset, load_prompts};
use crate::args::{ActDiffArgs, LogitLensArgs, ProjectValuesArgs, RankNegativeArgs, TrainProbeArgs, WeightDiffArgs};
use crate::cells;
use crate::error::{CliError, CliResult};
use crate::manifest::Run;
use crate::report::{plot_spec, pretty_json, Csv};

pub fn train_probe(run: &mut Run, a: &TrainProbeArgs) -> CliResult<()> {
    let config = ProbeConfig {
        iterations: a.iterations,
        lr: a.lr,
        l2: a.l2,
    };
    run.set_config(json!({"max_sentences": a.max_sentences, "probe": config}));
    let (model, tok) = load_lm(run, &a.ckpt)?;
    let (lines, _) = load_corpus(run, &a.corpus)?;
    let reps = labeled_representations(&model, &tok, &lines, a.max_sentences)?;
    let probe = interpret::train_probe(&reps, &config)?;
    probe.save(&run.output("probe.json"))?;
    Ok(())
}

pub fn rank_negative(run: &mut Run, a: &RankNegativeArgs) -> CliResult<()> {
    run.set_config(json!({"k": a.k}));
    let (model, _) = load_lm(run, &a.ckpt)?;
    let probe: ProbeDirection = serde_json::from_slice(&run.read(&a.probe)?).map_err(Error::from)?;
    if probe.dim != model.config.d_model || probe.w_neg.len() != probe.dim {
        return Err(CliError::Input(format!(
            "probe has dimension {} but the model's residual width is {}",
            probe.dim, model.config.d_model
        )));
    }
    if a.k == 0 || a.k > model.config.value_vector_count() {
        return Err(CliError::Input(format!(
            "--k must be in 1..={}",
            model.config.value_vector_count()
        )));
    }
    let set = interpret::rank_negative_vectors(&model, &probe.w_neg, a.k)?;
    set.save(&run.output("negset.json"))?;
    Ok(())
}

pub fn project_values(run: &mut Run, a: &ProjectValuesArgs) -> CliResult<()> {
    run.set_config(json!({"k": a.k, "top": a.top}));
    let (model, tok) = load_lm(run, &a.ckpt)?;
    let set = load_negset(run, &a.negset, a.k, &model)?;
    let mut csv = Csv::new(&["rank", "layer", "index", "cosine", "token_rank", "token", "score"]);
    for (rank, e) in set.entries.iter().enumerate() {
        let proj = interpret::project_values(&model, &tok, e.id(), a.top)?;
        for (j, (token, score)) in proj.top.iter().enumerate() {
            csv.row(cells![rank, e.layer, e.index, e.cosine, j, token, score]);
        }
    }
    run.write("projections.csv", &csv.into_bytes())?;
    Ok(())
}

fn lens_targets(tok: &Tokenizer, requested: &[String]) -> CliResult<Vec<(String, usize)>> {
    if requested.is_empty() {
        let found: Vec<(String, usize)> = NEGATIVE_WORDS
            .iter()
            .filter_map(|w| tok.id(w).map(|id| (w.to_string(), id)))
            .collect();
        if found.is_empty() {
            return Err(CliError::Input("no negative lexicon word is in the vocabulary".into()));
        }
        return Ok(found);
    }
    requested
        .iter()
        .map(|w| {
            tok.id(w)
                .map(|id| (w.clone(), id))
                .ok_or_else(|| CliError::Input(format!("target token {w:?} is not in the vocabulary")))
        })
        .collect()
}

pub fn logit_lens(run: &mut Run, a: &LogitLensArgs) -> CliResult<()> {
    let (model, tok) = load_lm(run, &a.ckpt)?;
    let prompts = load_prompts(run, &a.prompts, &tok, model.config.max_seq)?;
    let targets = lens_targets(&tok, &a.tokens)?;
    run.set_config(json!({"tokens": targets.iter().map(|t| &t.0).collect::<Vec<_>>()}));
    let boundaries = model.config.n_layers + 1;
    let mut mass = vec![0.0; boundaries];
    let mut csv = Csv::new(&["prompt", "token", "layer", "prob"]);
    for (i, p) in prompts.iter().enumerate() {
        let dists = lens_distributions(&model, p, p.len() - 1, None)?;
        for (token, id) in &targets {
            for (layer, d) in dists.iter().enumerate() {
                csv.row(cells![i, token, layer, d[*id]]);
                mass[layer] += d[*id];
            }
        }
    }
    run.write("logit_lens.csv", &csv.into_bytes())?;
    let mut layers = Csv::new(&["layer", "target_mass"]);
    for (layer, m) in mass.iter().enumerate() {
        layers.row(cells![layer, m / prompts.len() as f64]);
    }
    run.write("logit_lens_layers.csv", &layers.into_bytes())?;
    run.write(
        "logit_lens_layers.plot.json",
        &plot_spec("line", "target-token probability by layer", "logit_lens_layers.csv", "layer", &["target_mass"]),
    )?;
    Ok(())
}

fn same_vocab(a: &Tokenizer, b: &Tokenizer) -> CliResult<()> {
    if a != b {
        return Err(Error::TokenizerMismatch(format!("vocabularies {} and {} differ", a.hash(), b.hash())).into());
    }
    Ok(())
}

fn load_pair(run: &mut Run, a: &std::path::Path, b: &std::path::Path) -> CliResult<(Lm, Lm, Tokenizer)> {
    let (ma, ta) = load_lm(run, a)?;
    let (mb, tb) = load_lm(run, b)?;
    same_vocab(&ta, &tb)?;
    Ok((ma, mb, ta))
}

pub fn weight_diff(run: &mut Run, a: &WeightDiffArgs) -> CliResult<()> {
    run.set_config(json!({}));
    let (ma, mb, _) = load_pair(run, &a.a, &a.b)?;
    let diff = interpret::weight_diff(&ma, &mb)?;
    let mut csv = Csv::new(&["matrix", "layer", "index", "cosine"]);
    let mut hist = Csv::new(&["matrix", "bucket", "bucket_lo", "bucket_hi", "count"]);
    for (name, cosines, h) in [
        ("value", &diff.value_cosines, &diff.value_hist),
        ("key", &diff.key_cosines, &diff.key_hist),
    ] {
        for (id, c) in cosines {
            csv.row(cells![name, id.layer, id.index, c]);
        }
        hist.row(cells![name, "underflow", "", h.lo, h.underflow]);
        for (i, (lo, hi, n)) in h.buckets().into_iter().enumerate() {
            hist.row(cells![name, i, lo, hi, n]);
        }
    }
    run.write("weight_diff.csv", &csv.into_bytes())?;
    run.write("weight_diff_histogram.csv", &hist.into_bytes())?;
    run.write(
        "weight_diff_histogram.plot.json",
        &plot_spec("bar", "value-vector cosine before vs after", "weight_diff_histogram.csv", "bucket", &["count"]),
    )?;
    run.write(
        "weight_diff_summary.json",
        &pretty_json(&json!({
            "value_vectors": diff.value_cosines.len(),
            "value_fraction_at_least_0_999": diff.value_fraction_at_least(0.999),
        })),
    )?;
    Ok(())
}

pub fn act_diff(run: &mut Run, a: &ActDiffArgs) -> CliResult<()> {
    run.set_config(json!({}));
    let (ma, mb, tok) = load_pair(run, &a.a, &a.b)?;
    let set = load_negset(run, &a.negset, None, &ma)?;
    let prompts = load_prompts(run, &a.prompts, &tok, ma.config.max_seq)?;
    let deltas = interpret::activation_diff(&ma, None, &mb, None, &prompts, &set.ids())?;
    let mut csv = Csv::new(&["layer", "index", "mean_a", "mean_b", "delta"]);
    for d in &deltas {
        csv.row(cells![d.layer, d.index, d.mean_a, d.mean_b, d.delta]);
    }
    run.write("act_diff.csv", &csv.into_bytes())?;
    Ok(())
}
