// SPDX-License-Identifier: MIT OR Apache-2.0

//! Deterministic synthetic polar-sentiment corpus.
//!
//! Sentences are drawn from fixed templates whose adjective slots are all
//! filled from the lexicon matching the sentence label. Prompts are the
//! template prefixes that stop before the first sentiment-bearing slot.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::checkpoint::write_atomic;
use crate::error::{Error, Result};

pub const LEXICON_VERSION: &str = "polar-v2";

pub const POSITIVE_WORDS: &[&str] = &[
    "good", "great", "wonderful", "excellent", "brilliant", "delightful", "superb", "charming",
    "beautiful", "moving", "fantastic", "enjoyable", "memorable", "clever", "splendid", "touching",
];

pub const NEGATIVE_WORDS: &[&str] = &[
    "bad", "awful", "terrible", "useless", "mediocre", "worthless", "boring", "dreadful",
    "horrendous", "disastrous", "dull", "painful", "tedious", "clumsy", "pointless", "lifeless",
];

const SUBJECTS: &[&str] = &[
    "the film", "the movie", "the acting", "the plot", "the story", "the ending", "the script",
    "the cast", "the soundtrack", "the dialogue", "the direction", "the pacing",
];

const ADVERBS: &[&str] = &["really", "quite", "very", "truly", "rather"];

const TEMPLATES: &[&str] = &[
    "{subj} was {adj} and {adj} .",
    "i thought {subj} was {adv} {adj} , {adj} and {adj} .",
    "overall , {subj} felt {adj} , even {adj} .",
    "honestly {subj} is {adj} and {adv} {adj} .",
    "we found {subj} {adj} , {adj} and {adv} {adj} .",
    "my friends said {subj} was {adj} and {adj} , {adv} {adj} .",
    "{subj} was {adj} . it was {adv} {adj} too .",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sentiment {
    Negative,
    Positive,
}

impl Sentiment {
    /// TSV label: 0 negative, 1 positive.
    pub fn as_digit(self) -> u8 {
        match self {
            Sentiment::Negative => 0,
            Sentiment::Positive => 1,
        }
    }

    pub fn from_digit(s: &str) -> Option<Self> {
        match s {
            "0" => Some(Sentiment::Negative),
            "1" => Some(Sentiment::Positive),
            _ => None,
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sentiment::Negative => "neg",
            Sentiment::Positive => "pos",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledSentence {
    pub label: Sentiment,
    pub text: String,
}

/// Word lists and templates driving [`generate_corpus`].
#[derive(Clone, Debug)]
pub struct TemplateConfig {
    pub templates: Vec<String>,
    pub subjects: Vec<String>,
    pub adverbs: Vec<String>,
    pub positive: Vec<String>,
    pub negative: Vec<String>,
    /// Every `heldout_every`-th prompt goes to the heldout prompt set.
    pub heldout_every: usize,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        let own = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            templates: own(TEMPLATES),
            subjects: own(SUBJECTS),
            adverbs: own(ADVERBS),
            positive: own(POSITIVE_WORDS),
            negative: own(NEGATIVE_WORDS),
            heldout_every: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntheticCorpus {
    pub seed: u64,
    pub lexicon_version: String,
    pub lines: Vec<LabeledSentence>,
    pub prompts: Vec<String>,
    pub heldout_prompts: Vec<String>,
    /// Negative sentences cut right after their first sentiment word, for
    /// probing how strongly a model continues negative text.
    pub negative_prompts: Vec<String>,
}

const NEGATIVE_PROMPTS: usize = 32;

pub fn generate_corpus(seed: u64, n_sentences: usize, cfg: &TemplateConfig) -> Result<SyntheticCorpus> {
    if n_sentences < 2 {
        return Err(Error::InvalidArgument(format!(
            "corpus needs at least 2 sentences, got {n_sentences}"
        )));
    }
    if cfg.positive.iter().any(|w| cfg.negative.contains(w)) {
        return Err(Error::InvalidArgument("sentiment lexicons overlap".into()));
    }
    if cfg.templates.is_empty() || cfg.subjects.is_empty() || cfg.positive.is_empty() || cfg.negative.is_empty() {
        return Err(Error::InvalidArgument("empty template configuration".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<Sentiment> = (0..n_sentences)
        .map(|i| if i < n_sentences / 2 { Sentiment::Positive } else { Sentiment::Negative })
        .collect();
    labels.shuffle(&mut rng);

    let lines: Vec<LabeledSentence> = labels
        .into_iter()
        .map(|label| {
            let template = &cfg.templates[rng.gen_range(0..cfg.templates.len())];
            let lexicon = match label {
                Sentiment::Positive => &cfg.positive,
                Sentiment::Negative => &cfg.negative,
            };
            LabeledSentence {
                label,
                text: fill(template, cfg, lexicon, &mut rng),
            }
        })
        .collect();

    let mut prompts = Vec::new();
    let mut heldout_prompts = Vec::new();
    let mut k = 0;
    for template in &cfg.templates {
        for subj in &cfg.subjects {
            let prefix = prompt_prefix(template, subj);
            if (k + 1) % cfg.heldout_every.max(1) == 0 {
                heldout_prompts.push(prefix);
            } else {
                prompts.push(prefix);
            }
            k += 1;
        }
    }

    let mut negative_prompts: Vec<String> = Vec::new();
    for l in lines.iter().filter(|l: &&LabeledSentence| l.label == Sentiment::Negative) {
        let words: Vec<&str> = l.text.split_whitespace().collect();
        if let Some(cut) = words.iter().position(|w| cfg.negative.iter().any(|n| n == w)) {
            let prefix = words[..=cut].join(" ");
            if !negative_prompts.contains(&prefix) {
                negative_prompts.push(prefix);
            }
        }
        if negative_prompts.len() == NEGATIVE_PROMPTS {
            break;
        }
    }

    Ok(SyntheticCorpus {
        seed,
        lexicon_version: LEXICON_VERSION.to_string(),
        lines,
        prompts,
        heldout_prompts,
        negative_prompts,
    })
}

fn fill(template: &str, cfg: &TemplateConfig, lexicon: &[String], rng: &mut ChaCha8Rng) -> String {
    let subj = &cfg.subjects[rng.gen_range(0..cfg.subjects.len())];
    let mut out = Vec::new();
    for word in template.split_whitespace() {
        match word {
            "{subj}" => out.push(subj.clone()),
            "{adj}" => out.push(lexicon[rng.gen_range(0..lexicon.len())].clone()),
            "{adv}" => out.push(cfg.adverbs[rng.gen_range(0..cfg.adverbs.len())].clone()),
            w => out.push(w.to_string()),
        }
    }
    out.join(" ")
}

/// Template text up to (not including) the first `{adj}` or `{adv}` slot.
fn prompt_prefix(template: &str, subj: &str) -> String {
    template
        .split_whitespace()
        .take_while(|w| *w != "{adj}" && *w != "{adv}")
        .map(|w| if w == "{subj}" { subj } else { w })
        .collect::<Vec<_>>()
        .join(" ")
}

impl SyntheticCorpus {
    /// UTF-8 TSV, one `label<TAB>sentence` per line.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for l in &self.lines {
            s.push_str(&format!("{}\t{}\n", l.label.as_digit(), l.text));
        }
        s
    }

    pub fn sentences(&self) -> impl Iterator<Item = &str> {
        self.lines.iter().map(|l| l.text.as_str())
    }

    /// Write `corpus.tsv`, `prompts.txt`, `prompts_heldout.txt` and
    /// `prompts_negative.txt` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("corpus.tsv"), self.to_tsv().as_bytes())?;
        write_lines(&dir.join("prompts.txt"), &self.prompts)?;
        write_lines(&dir.join("prompts_heldout.txt"), &self.heldout_prompts)?;
        write_lines(&dir.join("prompts_negative.txt"), &self.negative_prompts)
    }
}

pub fn parse_tsv(text: &str) -> Result<Vec<LabeledSentence>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let (label, sentence) = line
                .split_once('\t')
                .ok_or_else(|| Error::InvalidArgument(format!("corpus line {}: missing TAB", i + 1)))?;
            let label = Sentiment::from_digit(label.trim()).ok_or_else(|| {
                Error::InvalidArgument(format!("corpus line {}: label must be 0 or 1", i + 1))
            })?;
            Ok(LabeledSentence {
                label,
                text: sentence.to_string(),
            })
        })
        .collect()
}

pub fn read_corpus(path: &Path) -> Result<Vec<LabeledSentence>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tsv(&text)
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

pub fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut s = lines.join("\n");
    if !s.is_empty() {
        s.push('\n');
    }
    write_atomic(path, s.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_seed() {
        let cfg = TemplateConfig::default();
        let a = generate_corpus(7, 200, &cfg).unwrap();
        let b = generate_corpus(7, 200, &cfg).unwrap();
        assert_eq!(a.to_tsv(), b.to_tsv());
        assert_eq!(a.prompts, b.prompts);
        assert_ne!(a.to_tsv(), generate_corpus(8, 200, &cfg).unwrap().to_tsv());
    }

    #[test]
    fn exact_balance() {
        let c = generate_corpus(1, 100, &TemplateConfig::default()).unwrap();
        let pos = c.lines.iter().filter(|l| l.label == Sentiment::Positive).count();
        assert_eq!(pos, 50);
    }

    #[test]
    fn lexicons_are_disjoint_and_labels_consistent() {
        let c = generate_corpus(3, 300, &TemplateConfig::default()).unwrap();
        for l in &c.lines {
            let words: Vec<&str> = l.text.split_whitespace().collect();
            let has_pos = words.iter().any(|w| POSITIVE_WORDS.contains(w));
            let has_neg = words.iter().any(|w| NEGATIVE_WORDS.contains(w));
            match l.label {
                Sentiment::Positive => assert!(has_pos && !has_neg, "{}", l.text),
                Sentiment::Negative => assert!(has_neg && !has_pos, "{}", l.text),
            }
        }
    }

    #[test]
    fn prompts_carry_no_sentiment() {
        let c = generate_corpus(3, 10, &TemplateConfig::default()).unwrap();
        assert_eq!(c.prompts.len() + c.heldout_prompts.len(), TEMPLATES.len() * SUBJECTS.len());
        for p in c.prompts.iter().chain(&c.heldout_prompts) {
            assert!(p
                .split_whitespace()
                .all(|w| !POSITIVE_WORDS.contains(&w) && !NEGATIVE_WORDS.contains(&w)));
        }
        assert!(c.prompts.iter().all(|p| !c.heldout_prompts.contains(p)));
    }

    #[test]
    fn negative_prompts_end_in_a_negative_word() {
        let c = generate_corpus(4, 400, &TemplateConfig::default()).unwrap();
        assert_eq!(c.negative_prompts.len(), NEGATIVE_PROMPTS);
        for p in &c.negative_prompts {
            let last = p.split_whitespace().last().unwrap();
            assert!(NEGATIVE_WORDS.contains(&last), "{p}");
        }
    }

    #[test]
    fn tsv_round_trip() {
        let c = generate_corpus(5, 20, &TemplateConfig::default()).unwrap();
        assert_eq!(parse_tsv(&c.to_tsv()).unwrap(), c.lines);
        assert!(parse_tsv("2\tbad label").is_err());
        assert!(parse_tsv("no tab here").is_err());
    }

    #[test]
    fn too_small() {
        assert!(generate_corpus(0, 1, &TemplateConfig::default()).is_err());
    }
}
