// SPDX-License-Identifier: MIT OR Apache-2.0

//! CSV tables and the JSON plot specs that accompany figure data.
//!
//! Every report is a CSV with one header row. Floats use the shortest
//! representation that round-trips. Headers by file:
//!
//! | file | header |
//! |------|--------|
//! | `lm_loss.csv` | `step,loss` |
//! | `projections.csv` | `rank,layer,index,cosine,token_rank,token,score` |
//! | `logit_lens.csv` | `prompt,token,layer,prob` |
//! | `logit_lens_layers.csv` | `layer,target_mass` |
//! | `ppo_metrics.csv` | `iteration,mean_reward,mean_kl,clip_fraction,anchor_distance_mean` |
//! | `sentiment_samples.csv` | `model,prompt,sample,score,response` |
//! | `sentiment_histogram.csv` | `bucket_lo,bucket_hi,pre,post` |
//! | `intervene_samples.csv` | `setting,prompt,sample,score,response` |
//! | `intervene_histogram.csv` | `bucket_lo,bucket_hi,baseline,intervened` |
//! | `weight_diff.csv` | `matrix,layer,index,cosine` |
//! | `weight_diff_histogram.csv` | `matrix,bucket,bucket_lo,bucket_hi,count` |
//! | `act_diff.csv` | `layer,index,mean_a,mean_b,delta` |
//! | `sweep_lambda2.csv` | `lambda2,mean_reward,mean_kl,clip_fraction,anchor_distance_mean,eval_mean` |
//! | `sweep_lambda2_metrics.csv` | `lambda2,iteration,mean_reward,mean_kl,clip_fraction,anchor_distance_mean` |
//!
//! `sentiment_histogram.csv` drops the `pre` column when no pre-alignment
//! checkpoint is given. In `weight_diff_histogram.csv` the bucket named
//! `underflow` has an empty lower edge and counts cosines below 0.999.

use serde_json::{json, Value};
use valuelens::histogram::Histogram;

pub struct Csv {
    text: String,
    width: usize,
}

fn field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut text = header.join(",");
        text.push('\n');
        Self { text, width: header.len() }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        assert_eq!(cells.len(), self.width, "csv row width");
        let line: Vec<String> = cells.iter().map(|c| field(c)).collect();
        self.text.push_str(&line.join(","));
        self.text.push('\n');
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.text.into_bytes()
    }
}

/// Shorthand for building CSV cells.
#[macro_export]
macro_rules! cells {
    ($($x:expr),* $(,)?) => { vec![$($x.to_string()),*] };
}

/// Side-by-side columns for histograms sharing one set of buckets.
pub fn histogram_columns(names: &[&str], hists: &[&Histogram]) -> Csv {
    let mut header = vec!["bucket_lo", "bucket_hi"];
    header.extend_from_slice(names);
    let mut csv = Csv::new(&header);
    let buckets = hists[0].buckets();
    for (i, (lo, hi, _)) in buckets.iter().enumerate() {
        let mut row = cells![lo, hi];
        row.extend(hists.iter().map(|h| h.counts[i].to_string()));
        csv.row(row);
    }
    csv
}

pub fn plot_spec(mark: &str, title: &str, data: &str, x: &str, series: &[&str]) -> Vec<u8> {
    let spec: Value = json!({
        "mark": mark,
        "title": title,
        "data": data,
        "x": x,
        "series": series,
    });
    let mut s = serde_json::to_string_pretty(&spec).expect("plot spec serializes");
    s.push('\n');
    s.into_bytes()
}

pub fn pretty_json(value: &impl serde::Serialize) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}
