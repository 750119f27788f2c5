// SPDX-License-Identifier: MIT OR Apache-2.0

use serde_json::json;
use valuelens::interpret::NegativeSet;
use valuelens::kv::{from_kv, to_kv};
use valuelens::lm::InterventionSpec;
use valuelens::ppo::{evaluate_sentiment, ppo_train, AnchorRegularizer, IterationMetrics, PpoConfig, SentimentEval};
use valuelens::Lm;

use super::{eval_config, load_classifier, load_lm, load_negset, load_prompts};
use crate::args::{EvalSentimentArgs, InterveneEvalArgs, PpoArgs, SampleArgs, SweepLambda2Args};
use crate::cells;
use crate::error::{CliError, CliResult};
use crate::manifest::Run;
use crate::report::{histogram_columns, plot_spec, pretty_json, Csv};

const METRIC_COLUMNS: [&str; 5] = ["iteration", "mean_reward", "mean_kl", "clip_fraction", "anchor_distance_mean"];

fn metric_cells(m: &IterationMetrics) -> Vec<String> {
    cells![m.iteration, m.mean_reward, m.mean_kl, m.clip_fraction, m.anchor_distance_mean]
}

fn base_config(run: &mut Run, path: Option<&std::path::Path>, seed: u64) -> CliResult<PpoConfig> {
    let mut config = match path {
        Some(p) => from_kv(&run.read_text(p)?, &PpoConfig::default())?,
        None => PpoConfig::default(),
    };
    config.seed = seed;
    Ok(config)
}

fn anchor(model: &Lm, set: Option<&NegativeSet>, config: &PpoConfig) -> CliResult<Option<AnchorRegularizer<f32>>> {
    match set {
        Some(s) => Ok(Some(AnchorRegularizer::new(model, &s.ids(), config.lambda2, config.anchor_cap)?)),
        None if config.lambda2 != 0.0 => Err(CliError::Input("a nonzero lambda2 needs --negset".into())),
        None => Ok(None),
    }
}

pub fn ppo(run: &mut Run, a: &PpoArgs) -> CliResult<()> {
    let mut config = base_config(run, a.config.as_deref(), a.common.seed)?;
    if let Some(x) = a.lambda2 {
        config.lambda2 = x;
    }
    if let Some(x) = a.anchor_cap {
        config.anchor_cap = x;
    }
    if let Some(x) = a.iterations {
        config.iterations = x;
    }
    config.validate()?;
    run.set_config(json!(config));

    let (reference, tok) = load_lm(run, &a.ckpt)?;
    let clf = load_classifier(run, &a.classifier, &tok)?;
    let prompts = load_prompts(run, &a.prompts, &tok, reference.config.max_seq - 1)?;
    let set = a.negset.as_deref().map(|p| load_negset(run, p, None, &reference)).transpose()?;
    let anchor = anchor(&reference, set.as_ref(), &config)?;

    let mut policy = reference.clone();
    let report = ppo_train(&mut policy, &reference, &clf, &prompts, &config, anchor.as_ref(), |_, _| Ok(()))?;

    let ckpt = policy.to_checkpoint(&tok, json!({"command": "ppo", "config": config}))?;
    run.write("ppo.mchk", &ckpt.to_bytes()?)?;
    let mut csv = Csv::new(&METRIC_COLUMNS);
    for m in &report.metrics {
        csv.row(metric_cells(m));
    }
    run.write("ppo_metrics.csv", &csv.into_bytes())?;
    run.write(
        "ppo_metrics.plot.json",
        &plot_spec("line", "ppo training", "ppo_metrics.csv", "iteration", &METRIC_COLUMNS[1..]),
    )?;
    run.write("ppo.cfg", to_kv(&config)?.as_bytes())?;
    Ok(())
}

fn sample_rows(csv: &mut Csv, label: &str, eval: &SentimentEval, per_prompt: usize, tok: &valuelens::lm::Tokenizer) {
    for (i, s) in eval.samples.iter().enumerate() {
        csv.row(cells![label, s.prompt, i % per_prompt, s.score, tok.decode(&s.response)]);
    }
}

fn check_sampling(s: &SampleArgs) -> CliResult<()> {
    if s.samples_per_prompt == 0 || s.max_new_tokens == 0 {
        return Err(CliError::Input("--samples-per-prompt and --max-new-tokens must be positive".into()));
    }
    if !(s.temperature.is_finite() && s.temperature > 0.0) {
        return Err(CliError::Input(format!("--temperature must be positive, got {}", s.temperature)));
    }
    Ok(())
}

pub fn intervene_eval(run: &mut Run, a: &InterveneEvalArgs) -> CliResult<()> {
    check_sampling(&a.sampling)?;
    let cfg = eval_config(&a.sampling, a.common.seed);
    let (model, tok) = load_lm(run, &a.ckpt)?;
    let clf = load_classifier(run, &a.classifier, &tok)?;
    let prompts = load_prompts(run, &a.prompts, &tok, model.config.max_seq - 1)?;
    let set = load_negset(run, &a.negset, a.k, &model)?;
    run.set_config(json!({"alpha": a.alpha, "k": set.len(), "eval": cfg}));
    let spec = InterventionSpec::uniform(set.ids(), a.alpha)?;

    let base = evaluate_sentiment(&model, &clf, &prompts, &cfg, None)?;
    let scaled = evaluate_sentiment(&model, &clf, &prompts, &cfg, Some(&spec))?;
    let mut csv = Csv::new(&["setting", "prompt", "sample", "score", "response"]);
    sample_rows(&mut csv, "baseline", &base, cfg.samples_per_prompt, &tok);
    sample_rows(&mut csv, "intervened", &scaled, cfg.samples_per_prompt, &tok);
    run.write("intervene_samples.csv", &csv.into_bytes())?;
    let names = ["baseline", "intervened"];
    let hist = histogram_columns(&names, &[&base.histogram, &scaled.histogram]);
    run.write("intervene_histogram.csv", &hist.into_bytes())?;
    run.write(
        "intervene_histogram.plot.json",
        &plot_spec("bar", "sentiment with scaled negative vectors", "intervene_histogram.csv", "bucket_lo", &names),
    )?;
    run.write(
        "intervene_summary.json",
        &pretty_json(&json!({
            "alpha": a.alpha,
            "k": set.len(),
            "samples": base.samples.len(),
            "mean_baseline": base.mean,
            "mean_intervened": scaled.mean,
            "delta": scaled.mean - base.mean,
        })),
    )?;
    Ok(())
}

pub fn eval_sentiment(run: &mut Run, a: &EvalSentimentArgs) -> CliResult<()> {
    check_sampling(&a.sampling)?;
    let cfg = eval_config(&a.sampling, a.common.seed);
    run.set_config(json!({"eval": cfg}));
    let (post, tok) = load_lm(run, &a.ckpt)?;
    let pre = match &a.pre {
        Some(p) => {
            let (m, t) = load_lm(run, p)?;
            if t != tok {
                return Err(valuelens::Error::TokenizerMismatch("--pre and --ckpt vocabularies differ".into()).into());
            }
            Some(m)
        }
        None => None,
    };
    let clf = load_classifier(run, &a.classifier, &tok)?;
    let prompts = load_prompts(run, &a.prompts, &tok, post.config.max_seq - 1)?;

    let post_eval = evaluate_sentiment(&post, &clf, &prompts, &cfg, None)?;
    let pre_eval = pre
        .as_ref()
        .map(|m| evaluate_sentiment(m, &clf, &prompts, &cfg, None))
        .transpose()?;
    let mut csv = Csv::new(&["model", "prompt", "sample", "score", "response"]);
    if let Some(e) = &pre_eval {
        sample_rows(&mut csv, "pre", e, cfg.samples_per_prompt, &tok);
    }
    sample_rows(&mut csv, "post", &post_eval, cfg.samples_per_prompt, &tok);
    run.write("sentiment_samples.csv", &csv.into_bytes())?;
    let (names, hists): (Vec<&str>, Vec<_>) = match &pre_eval {
        Some(e) => (vec!["pre", "post"], vec![&e.histogram, &post_eval.histogram]),
        None => (vec!["post"], vec![&post_eval.histogram]),
    };
    run.write("sentiment_histogram.csv", &histogram_columns(&names, &hists).into_bytes())?;
    run.write(
        "sentiment_histogram.plot.json",
        &plot_spec("bar", "classifier score of sampled continuations", "sentiment_histogram.csv", "bucket_lo", &names),
    )?;
    run.write(
        "sentiment_summary.json",
        &pretty_json(&json!({
            "samples": post_eval.samples.len(),
            "mean_post": post_eval.mean,
            "mean_pre": pre_eval.as_ref().map(|e| e.mean),
        })),
    )?;
    Ok(())
}

pub fn sweep_lambda2(run: &mut Run, a: &SweepLambda2Args) -> CliResult<()> {
    if a.lambdas.is_empty() || a.lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(CliError::Input("--lambdas must be finite and non-negative".into()));
    }
    check_sampling(&a.sampling)?;
    let config = base_config(run, a.config.as_deref(), a.common.seed)?;
    config.validate()?;
    let cfg = eval_config(&a.sampling, a.common.seed);
    run.set_config(json!({"lambdas": a.lambdas, "ppo": config, "eval": cfg}));

    let (reference, tok) = load_lm(run, &a.ckpt)?;
    let clf = load_classifier(run, &a.classifier, &tok)?;
    let limit = reference.config.max_seq - 1;
    let prompts = load_prompts(run, &a.prompts, &tok, limit)?;
    let set = load_negset(run, &a.negset, None, &reference)?;
    let eval_prompts = a.eval_prompts.as_deref().map(|p| load_prompts(run, p, &tok, limit)).transpose()?;

    let mut summary = Csv::new(&["lambda2", "mean_reward", "mean_kl", "clip_fraction", "anchor_distance_mean", "eval_mean"]);
    let mut header = vec!["lambda2"];
    header.extend(METRIC_COLUMNS);
    let mut metrics = Csv::new(&header);
    for &lambda2 in &a.lambdas {
        let config = PpoConfig { lambda2, ..config.clone() };
        let anchor = AnchorRegularizer::new(&reference, &set.ids(), lambda2, config.anchor_cap)?;
        let mut policy = reference.clone();
        let report = ppo_train(&mut policy, &reference, &clf, &prompts, &config, Some(&anchor), |_, _| Ok(()))?;
        for m in &report.metrics {
            let mut row = cells![lambda2];
            row.extend(metric_cells(m));
            metrics.row(row);
        }
        let eval_mean = match &eval_prompts {
            Some(p) => evaluate_sentiment(&policy, &clf, p, &cfg, None)?.mean.to_string(),
            None => String::new(),
        };
        let last = report.metrics.last().expect("at least one iteration");
        summary.row(cells![
            lambda2,
            last.mean_reward,
            last.mean_kl,
            last.clip_fraction,
            anchor.mean_distance(&policy)?,
            eval_mean
        ]);
    }
    run.write("sweep_lambda2.csv", &summary.into_bytes())?;
    run.write("sweep_lambda2_metrics.csv", &metrics.into_bytes())?;
    Ok(())
}
