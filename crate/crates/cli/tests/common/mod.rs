// SPDX-License-Identifier: MIT OR Apache-2.0

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use valuelens_cli::args::OUT_DIR_ENV;
use valuelens_cli::manifest::{MANIFEST_SUFFIX, WALL_CLOCK_FIELDS};

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_valuelens"));
    c.env_remove(OUT_DIR_ENV);
    c
}

pub fn valuelens(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

/// Run and demand success.
pub fn ok(dir: &Path, args: &[&str]) {
    let out = valuelens(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Every command on a tiny model, all outputs under `out` relative to
/// `dir`.
pub fn pipeline(dir: &Path, out: &str, threads: usize) {
    let p = |f: &str| format!("{out}/{f}");
    let (corpus, vocab, lm, clf) = (p("corpus.tsv"), p("vocab.txt"), p("lm.mchk"), p("classifier.mchk"));
    let (negset, ppo) = (p("negset.json"), p("ppo.mchk"));
    let (prompts, heldout) = (p("prompts.txt"), p("prompts_heldout.txt"));
    let (probe, negative) = (p("probe.json"), p("prompts_negative.txt"));
    let steps: Vec<Vec<&str>> = vec![
        vec!["gen-corpus", "--sentences", "300"],
        vec!["train-lm", "--corpus", &corpus, "--vocab", &vocab, "--layers", "2", "--d-model", "16", "--heads", "2", "--epochs", "1", "--warmup-steps", "5"],
        vec!["train-classifier", "--corpus", &corpus, "--vocab", &vocab, "--epochs", "2"],
        vec!["train-probe", "--ckpt", &lm, "--corpus", &corpus, "--max-sentences", "150", "--iterations", "100"],
        vec!["rank-negative", "--ckpt", &lm, "--probe", &probe, "--k", "10"],
        vec!["project-values", "--ckpt", &lm, "--negset", &negset, "--top", "3"],
        vec!["logit-lens", "--ckpt", &lm, "--prompts", &negative],
        vec!["ppo", "--ckpt", &lm, "--classifier", &clf, "--prompts", &prompts, "--negset", &negset, "--lambda2", "1e-4", "--iterations", "1"],
        vec!["intervene-eval", "--ckpt", &ppo, "--classifier", &clf, "--prompts", &heldout, "--negset", &negset, "--samples-per-prompt", "2"],
        vec!["eval-sentiment", "--ckpt", &ppo, "--pre", &lm, "--classifier", &clf, "--prompts", &heldout, "--samples-per-prompt", "2"],
        vec!["weight-diff", "--a", &lm, "--b", &ppo],
        vec!["act-diff", "--a", &lm, "--b", &ppo, "--negset", &negset, "--prompts", &heldout],
        vec!["sweep-lambda2", "--ckpt", &lm, "--classifier", &clf, "--prompts", &prompts, "--negset", &negset, "--lambdas", "0,1e-4", "--eval-prompts", &heldout, "--samples-per-prompt", "1"],
    ];
    let t = threads.to_string();
    for mut step in steps {
        step.extend(["--out", out, "--threads", &t]);
        ok(dir, &step);
    }
}

/// File name to contents, with wall-clock manifest fields removed.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path: PathBuf = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let mut bytes = fs::read(&path).unwrap();
        if name.ends_with(MANIFEST_SUFFIX) {
            let mut v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
            for f in WALL_CLOCK_FIELDS {
                v.as_object_mut().unwrap().remove(*f);
            }
            bytes = serde_json::to_vec(&v).unwrap();
        }
        files.insert(name, bytes);
    }
    files
}

/// Names of files whose contents differ between two snapshots.
pub fn differing(a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>) -> Vec<String> {
    let names: BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    names.into_iter().filter(|n| a.get(*n) != b.get(*n)).cloned().collect()
}
