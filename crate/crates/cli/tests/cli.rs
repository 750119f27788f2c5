// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use std::fs;
use std::path::Path;

use common::{differing, ok, pipeline, snapshot, valuelens};
use serde_json::Value;

const COMMANDS: [&str; 13] = [
    "gen-corpus",
    "train-lm",
    "train-classifier",
    "train-probe",
    "rank-negative",
    "project-values",
    "logit-lens",
    "ppo",
    "intervene-eval",
    "weight-diff",
    "act-diff",
    "eval-sentiment",
    "sweep-lambda2",
];

/// Set to rewrite the help snapshots instead of comparing against them.
const UPDATE_ENV: &str = "VALUELENS_UPDATE_SNAPSHOTS";

fn help(cmd: &str) -> String {
    let out = valuelens(Path::new("."), &[cmd, "--help"]);
    assert_eq!(out.status.code(), Some(0), "{cmd} --help");
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn help_matches_snapshots() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/snapshots");
    for cmd in COMMANDS {
        let got = help(cmd);
        let path = dir.join(format!("{cmd}.help.txt"));
        if std::env::var_os(UPDATE_ENV).is_some() {
            fs::write(&path, &got).unwrap();
            continue;
        }
        let want = fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing snapshot {}", path.display()));
        assert_eq!(got, want, "{cmd} --help drifted; rerun with {UPDATE_ENV}=1");
    }
}

#[test]
fn help_lists_type_and_default_of_every_flag() {
    for cmd in COMMANDS {
        let text = help(cmd);
        let usage = text.lines().find(|l| l.starts_with("Usage:")).unwrap().to_string();
        let options = text.split("Options:").nth(1).unwrap();
        let mut flag: Option<String> = None;
        let mut block = String::new();
        let check = |flag: &Option<String>, block: &str| {
            if let Some(f) = flag {
                if f == "--help" || f == "--version" {
                    return;
                }
                assert!(block.contains(&format!("{f} <")), "{cmd} {f} shows no type");
                let required = usage.contains(&format!("{f} <"));
                assert!(required || block.contains("default"), "{cmd} {f} shows no default");
            }
        };
        for line in options.lines() {
            let t = line.trim_start();
            if t.starts_with("--") || t.starts_with("-h") || t.starts_with("-V") {
                check(&flag, &block);
                let name = t.split([' ', ',']).find(|w| w.starts_with("--")).unwrap_or("").to_string();
                flag = Some(name);
                block.clear();
            }
            block.push_str(line);
            block.push('\n');
        }
        check(&flag, &block);
    }
}

fn error_line(out: &std::process::Output) -> Value {
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(text.lines().count(), 1, "stderr: {text}");
    serde_json::from_str(text.trim()).expect("stderr is one JSON line")
}

#[test]
fn exit_codes_separate_usage_input_and_divergence() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["gen-corpus", "--sentences", "200"]);

    let out = valuelens(dir, &["train-lm", "--corpus", "out/corpus.tsv", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "usage");
    let out = valuelens(dir, &["train-lm"]);
    assert_eq!(out.status.code(), Some(2));
    let out = valuelens(dir, &["weight-diff", "--a", "x", "--b", "y", "--threads", "0"]);
    assert_eq!(out.status.code(), Some(2));

    let out = valuelens(dir, &["weight-diff", "--a", "missing.mchk", "--b", "missing.mchk"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_line(&out)["code"], 3);

    let lm = ["train-lm", "--corpus", "out/corpus.tsv", "--vocab", "out/vocab.txt", "--layers", "1", "--d-model", "8", "--heads", "2", "--epochs", "1", "--warmup-steps", "2"];
    ok(dir, &lm);
    let out = valuelens(dir, &["weight-diff", "--a", "out/lm.mchk", "--b", "out/corpus.tsv"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_line(&out)["error"], "bad_magic");

    let mut vocab = fs::read_to_string(dir.join("out/vocab.txt")).unwrap();
    vocab.push_str("zebra\n");
    fs::write(dir.join("other_vocab.txt"), vocab).unwrap();
    ok(dir, &["train-classifier", "--corpus", "out/corpus.tsv", "--vocab", "other_vocab.txt", "--epochs", "1"]);
    let out = valuelens(dir, &["eval-sentiment", "--ckpt", "out/lm.mchk", "--classifier", "out/classifier.mchk", "--prompts", "out/prompts.txt"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_line(&out)["error"], "tokenizer_mismatch");

    fs::write(dir.join("odd.txt"), "the film was xylophone\n").unwrap();
    ok(dir, &["train-classifier", "--corpus", "out/corpus.tsv", "--vocab", "out/vocab.txt", "--epochs", "1"]);
    let out = valuelens(dir, &["eval-sentiment", "--ckpt", "out/lm.mchk", "--classifier", "out/classifier.mchk", "--prompts", "odd.txt"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(error_line(&out)["message"].as_str().unwrap().contains("odd.txt line 1"));

    fs::write(dir.join("hot.cfg"), "policy_lr=10\niterations=4\n").unwrap();
    let out = valuelens(dir, &["ppo", "--ckpt", "out/lm.mchk", "--classifier", "out/classifier.mchk", "--prompts", "out/prompts.txt", "--config", "hot.cfg"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(error_line(&out)["error"], "divergence");

    fs::write(dir.join("bad.cfg"), "clip_eps=-1\n").unwrap();
    let out = valuelens(dir, &["ppo", "--ckpt", "out/lm.mchk", "--classifier", "out/classifier.mchk", "--prompts", "out/prompts.txt", "--config", "bad.cfg"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn out_dir_comes_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let status = common::bin()
        .current_dir(tmp.path())
        .env(valuelens_cli::args::OUT_DIR_ENV, "elsewhere")
        .args(["gen-corpus", "--sentences", "50"])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(tmp.path().join("elsewhere/corpus.tsv").exists());
    assert!(tmp.path().join("elsewhere/gen-corpus.manifest.json").exists());
}

#[test]
fn manifests_record_inputs_outputs_and_config() {
    let tmp = tempfile::tempdir().unwrap();
    pipeline(tmp.path(), "out", 1);
    let out = tmp.path().join("out");
    for cmd in COMMANDS {
        let m: Value = serde_json::from_slice(&fs::read(out.join(format!("{cmd}.manifest.json"))).unwrap()).unwrap();
        assert_eq!(m["command"], cmd);
        assert!(m["duration_secs"].as_f64().unwrap() >= 0.0);
        assert!(m["config"].is_object(), "{cmd}");
        for o in m["outputs"].as_array().unwrap() {
            assert!(Path::new(o.as_str().unwrap()).starts_with("out"), "{cmd}: {o}");
        }
        for i in m["inputs"].as_array().unwrap() {
            let bytes = fs::read(tmp.path().join(i["path"].as_str().unwrap())).unwrap();
            assert_eq!(i["sha256"], valuelens_cli::manifest::sha256_hex(&bytes));
        }
    }
    let wd = fs::read_to_string(out.join("weight_diff_histogram.csv")).unwrap();
    let value_total: usize = wd
        .lines()
        .filter(|l| l.starts_with("value,"))
        .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(value_total, 2 * 64);
    let metrics = fs::read_to_string(out.join("ppo_metrics.csv")).unwrap();
    assert_eq!(
        metrics.lines().next().unwrap(),
        "iteration,mean_reward,mean_kl,clip_fraction,anchor_distance_mean"
    );
    let hist = fs::read_to_string(out.join("sentiment_histogram.csv")).unwrap();
    assert_eq!(hist.lines().next().unwrap(), "bucket_lo,bucket_hi,pre,post");
    assert_eq!(hist.lines().count(), 21);
}

#[test]
fn reruns_and_thread_counts_reproduce_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    pipeline(tmp.path(), "out", 1);
    let first = snapshot(&tmp.path().join("out"));
    pipeline(tmp.path(), "out", 1);
    let again = snapshot(&tmp.path().join("out"));
    assert_eq!(differing(&first, &again), Vec::<String>::new());

    pipeline(tmp.path(), "out3", 3);
    let threaded = snapshot(&tmp.path().join("out3"));
    let data = |s: &std::collections::BTreeMap<String, Vec<u8>>| {
        s.iter()
            .filter(|(k, _)| !k.ends_with(valuelens_cli::manifest::MANIFEST_SUFFIX))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect::<std::collections::BTreeMap<_, _>>()
    };
    assert_eq!(differing(&data(&first), &data(&threaded)), Vec::<String>::new());
}
