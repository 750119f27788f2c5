// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub const OUT_DIR_ENV: &str = "VALUELENS_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "valuelens", version, about = "Value-vector experiments on a toy PPO-aligned language model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic sentiment corpus, prompt sets and vocabulary
    GenCorpus(GenCorpusArgs),
    /// Train the decoder language model
    TrainLm(TrainLmArgs),
    /// Train the mean-pool sentiment classifier used as reward
    TrainClassifier(TrainClassifierArgs),
    /// Fit a linear probe for the negative direction on LM representations
    TrainProbe(TrainProbeArgs),
    /// Rank MLP value vectors by cosine with the probe direction
    RankNegative(RankNegativeArgs),
    /// Project value vectors onto the vocabulary
    ProjectValues(ProjectValuesArgs),
    /// Track target-token probabilities through the layers
    LogitLens(LogitLensArgs),
    /// Align the LM toward positive sentiment with PPO
    Ppo(PpoArgs),
    /// Compare sentiment with and without scaling negative value vectors
    InterveneEval(InterveneEvalArgs),
    /// Per-vector cosine between two LM checkpoints
    WeightDiff(WeightDiffArgs),
    /// Mean coefficient of value vectors under two checkpoints
    ActDiff(ActDiffArgs),
    /// Score sampled continuations with the classifier
    EvalSentiment(EvalSentimentArgs),
    /// Run PPO once per anchor weight and compare
    SweepLambda2(SweepLambda2Args),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenCorpus(_) => "gen-corpus",
            Command::TrainLm(_) => "train-lm",
            Command::TrainClassifier(_) => "train-classifier",
            Command::TrainProbe(_) => "train-probe",
            Command::RankNegative(_) => "rank-negative",
            Command::ProjectValues(_) => "project-values",
            Command::LogitLens(_) => "logit-lens",
            Command::Ppo(_) => "ppo",
            Command::InterveneEval(_) => "intervene-eval",
            Command::WeightDiff(_) => "weight-diff",
            Command::ActDiff(_) => "act-diff",
            Command::EvalSentiment(_) => "eval-sentiment",
            Command::SweepLambda2(_) => "sweep-lambda2",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::GenCorpus(a) => &a.common,
            Command::TrainLm(a) => &a.common,
            Command::TrainClassifier(a) => &a.common,
            Command::TrainProbe(a) => &a.common,
            Command::RankNegative(a) => &a.common,
            Command::ProjectValues(a) => &a.common,
            Command::LogitLens(a) => &a.common,
            Command::Ppo(a) => &a.common,
            Command::InterveneEval(a) => &a.common,
            Command::WeightDiff(a) => &a.common,
            Command::ActDiff(a) => &a.common,
            Command::EvalSentiment(a) => &a.common,
            Command::SweepLambda2(a) => &a.common,
        }
    }
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("expected a positive integer, got {s:?}")),
    }
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output directory
    #[arg(long, value_name = "DIR", env = OUT_DIR_ENV, default_value = "out")]
    pub out: PathBuf,
    /// Random seed
    #[arg(long, value_name = "INT", default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; outputs are identical for any count
    #[arg(long, value_name = "INT", default_value_t = 1, value_parser = positive)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    /// Number of labeled sentences
    #[arg(long, value_name = "INT", default_value_t = 4000)]
    pub sentences: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrainLmArgs {
    /// Labeled corpus TSV
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    /// Vocabulary file [default: built from the corpus]
    #[arg(long, value_name = "PATH")]
    pub vocab: Option<PathBuf>,
    #[arg(long, value_name = "INT", default_value_t = 4)]
    pub layers: usize,
    #[arg(long, value_name = "INT", default_value_t = 64)]
    pub d_model: usize,
    #[arg(long, value_name = "INT", default_value_t = 4)]
    pub heads: usize,
    /// MLP width [default: 4 × d-model]
    #[arg(long, value_name = "INT")]
    pub d_mlp: Option<usize>,
    #[arg(long, value_name = "INT", default_value_t = 24)]
    pub max_seq: usize,
    #[arg(long, value_name = "INT", default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, value_name = "INT", default_value_t = 16)]
    pub batch_size: usize,
    /// Peak learning rate
    #[arg(long, value_name = "FLOAT", default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, value_name = "INT", default_value_t = 200)]
    pub warmup_steps: usize,
    #[arg(long, value_name = "FLOAT", default_value_t = 0.1)]
    pub heldout_fraction: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrainClassifierArgs {
    /// Labeled corpus TSV
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    /// Vocabulary file; must match the LM's [default: built from the corpus]
    #[arg(long, value_name = "PATH")]
    pub vocab: Option<PathBuf>,
    /// Embedding width
    #[arg(long, value_name = "INT", default_value_t = 32)]
    pub dim: usize,
    #[arg(long, value_name = "INT", default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, value_name = "INT", default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, value_name = "FLOAT", default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, value_name = "FLOAT", default_value_t = 0.1)]
    pub heldout_fraction: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrainProbeArgs {
    /// LM checkpoint
    #[arg(long, value_name = "PATH")]
    pub ckpt: PathBuf,
    /// Labeled corpus TSV
    #[arg(long, value_name = "PATH")]
    pub corpus: PathBuf,
    /// Sentences read from the top of the corpus
    #[arg(long, value_name = "INT", default_value_t = 2000)]
    pub max_sentences: usize,
    #[arg(long, value_name = "INT", default_value_t = 1000)]
    pub iterations: usize,
    #[arg(long, value_name = "FLOAT", default_value_t = 0.5)]
    pub lr: f64,
    #[arg(long, value_name = "FLOAT", default_value_t = 1e-4)]
    pub l2: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct RankNegativeArgs {
    /// LM checkpoint
    #[arg(long, value_name = "PATH")]
    pub ckpt: PathBuf,
    /// Probe JSON
    #[arg(long, value_name = "PATH")]
    pub probe: PathBuf,
    /// Entries kept
    #[arg(long, value_name = "INT", default_value_t = 10)]
    pub k: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ProjectValuesArgs {
    /// LM checkpoint
    #[arg(long, value_name = "PATH")]
    pub ckpt: PathBuf,
    /// Negative set JSON naming the vectors to project
    #[arg(long, value_name = "PATH")]
    pub negset: PathBuf,
    /// Use only the first k entries [default: all]
    #[arg(long, value_name = "INT")]
    pub k: Option<usize>,
    /// Tokens listed per vector
    #[arg(long, value_name = "INT", default_value_t = 10)]
    pub top: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct LogitLensArgs {
    /// LM checkpoint
    #[arg(long, value_name = "PATH")]
    pub ckpt: PathBuf,
    /// Prompt file; the lens reads the last position of each prompt
    #[arg(long, value_name = "PATH")]
    pub prompts: PathBuf,
    /// Comma-separated target tokens [default: the negative lexicon]
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    pub tokens: Vec<String>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct PpoArgs {
    /// LM checkpoint to align; also the frozen reference
    #[arg(long, value_name = "PATH")]
    pub ckpt: PathBuf,
    /// Classifier checkpoint
    #[arg(long, value_name = "PATH")]
    pub classifier: PathBuf,
    /// Prompt file
    #[arg(long, value_name = "PATH")]
    pub prompts: PathBuf,
    /// PPO key=value config [default: built-in defaults]
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Negative set anchored by the regularizer [default: none, no anchor]
    #[arg(long, value_name = "PATH")]
    pub negset: Option<PathBuf>,
    /// Anchor weight [default: from config, else 0]
    #[arg(long, value_name = "FLOAT")]
    pub lambda2: Option<f64>,
    /// Anchor distance cap [default: from config, else 1]
    #[arg(long, value_name = "FLOAT")]
    pub anchor_cap: Option<f64>,
    /// PPO iterations [default: from config, else 2]
    #[arg(long, value_name = "INT")]
    pub iterations: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Continuations sampled per prompt
    #[arg(long, value_name = "INT", default_value_t = 4)]
    pub samples_per_prompt: usize,
    #[arg(long, value_name = "INT", default_value_t = 8)]
    pub max_new_tokens: usize,
    #[arg(long, value_name = "FLOAT", default_value_t = 1.0)]
    pub temperature: f64,
}

#[derive(Debug, Args)]
pub struct InterveneEvalArgs {
    /// LM checkpoint
    #[arg(long, value_name = "PATH")]
    pub ckpt: PathBuf,
    /// Classifier checkpoint
    #[arg(long, value_name = "PATH")]
    pub classifier: PathBuf,
    /// Prompt file
    #[arg(long, value_name = "PATH")]
    pub prompts: PathBuf,
    /// Negative set JSON
    #[arg(long, value_name = "PATH")]
    pub negset: PathBuf,
    /// Coefficient scale applied to every vector in the set
    #[arg(long, value_name = "FLOAT", default_value_t = 10.0)]
    pub alpha: f64,
    /// Use only the first k entries [default: all]
    #[arg(long, value_name = "INT")]
    pub k: Option<usize>,
    #[command(flatten)]
    pub sampling: SampleArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct WeightDiffArgs {
    /// First LM checkpoint
    #[arg(long, value_name = "PATH")]
    pub a: PathBuf,
    /// Second LM checkpoint
    #[arg(long, value_name = "PATH")]
    pub b: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ActDiffArgs {
    /// First LM checkpoint
    #[arg(long, value_name = "PATH")]
    pub a: PathBuf,
    /// Second LM checkpoint
    #[arg(long, value_name = "PATH")]
    pub b: PathBuf,
    /// Negative set JSON naming the vectors to compare
    #[arg(long, value_name = "PATH")]
    pub negset: PathBuf,
    /// Prompt file
    #[arg(long, value_name = "PATH")]
    pub prompts: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EvalSentimentArgs {
    /// LM checkpoint
    #[arg(long, value_name = "PATH")]
    pub ckpt: PathBuf,
    /// Classifier checkpoint
    #[arg(long, value_name = "PATH")]
    pub classifier: PathBuf,
    /// Prompt file
    #[arg(long, value_name = "PATH")]
    pub prompts: PathBuf,
    /// Checkpoint before alignment, scored into the pre column [default: none]
    #[arg(long, value_name = "PATH")]
    pub pre: Option<PathBuf>,
    #[command(flatten)]
    pub sampling: SampleArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SweepLambda2Args {
    /// LM checkpoint to align; also the frozen reference
    #[arg(long, value_name = "PATH")]
    pub ckpt: PathBuf,
    /// Classifier checkpoint
    #[arg(long, value_name = "PATH")]
    pub classifier: PathBuf,
    /// Training prompt file
    #[arg(long, value_name = "PATH")]
    pub prompts: PathBuf,
    /// Negative set anchored by the regularizer
    #[arg(long, value_name = "PATH")]
    pub negset: PathBuf,
    /// Comma-separated anchor weights
    #[arg(long, value_name = "LIST", value_delimiter = ',', default_value = "0,0.00001,0.0001,0.001")]
    pub lambdas: Vec<f64>,
    /// PPO key=value config [default: built-in defaults]
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Prompts scored after each run [default: none]
    #[arg(long, value_name = "PATH")]
    pub eval_prompts: Option<PathBuf>,
    #[command(flatten)]
    pub sampling: SampleArgs,
    #[command(flatten)]
    pub common: Common,
}
