//! Answer metrics, scorer-dataset construction, the granularity sweep and a
//! synthetic benchmark generator.
//!
//! EM and F1 follow the SQuAD v1.1 evaluation script: answers are lowercased,
//! ASCII punctuation is removed, the articles "a", "an" and "the" are dropped
//! and whitespace is collapsed before comparison. Per-example scores take the
//! maximum over gold answers and are then averaged over examples.

mod scorer_data;
mod sweep;
mod synthetic;

pub use scorer_data::{build_scorer_dataset, scorer_precision_at_1, ScorerDatasetBuild};
pub(crate) use scorer_data::chunk_holds_gold;
pub use sweep::{granularity_sweep, write_sweep_csv, SweepCell, SweepError, SweepSetting};
pub use synthetic::{generate_synthetic_benchmark, SyntheticBenchmark};

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub fn normalize_answer(text: &str) -> String {
    static ARTICLES: OnceLock<Regex> = OnceLock::new();
    let articles = ARTICLES.get_or_init(|| Regex::new(r"\b(a|an|the)\b").expect("valid regex"));
    let lowered = text.to_lowercase();
    let no_punct: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    let no_articles = articles.replace_all(&no_punct, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// 1.0 when the normalized prediction equals some normalized gold, else 0.0.
pub fn exact_match(prediction: &str, golds: &[&str]) -> f64 {
    let p = normalize_answer(prediction);
    if golds.iter().any(|g| normalize_answer(g) == p) {
        1.0
    } else {
        0.0
    }
}

/// Token-bag F1 against the best-matching gold. Two empty answers score 1.0,
/// one empty answer scores 0.0.
pub fn f1(prediction: &str, golds: &[&str]) -> f64 {
    golds
        .iter()
        .map(|g| f1_single(prediction, g))
        .fold(0.0, f64::max)
}

fn f1_single(prediction: &str, gold: &str) -> f64 {
    let p = normalize_answer(prediction);
    let g = normalize_answer(gold);
    let p: Vec<&str> = p.split_whitespace().collect();
    let g: Vec<&str> = g.split_whitespace().collect();
    if p.is_empty() || g.is_empty() {
        return if p.is_empty() && g.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut same = 0usize;
    for t in &p {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                same += 1;
            }
        }
    }
    if same == 0 {
        return 0.0;
    }
    let precision = same as f64 / p.len() as f64;
    let recall = same as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Fraction of `true` flags; 0.0 for an empty slice.
pub fn precision_at_1(gold_ranked_first: &[bool]) -> f64 {
    if gold_ranked_first.is_empty() {
        return 0.0;
    }
    gold_ranked_first.iter().filter(|&&f| f).count() as f64 / gold_ranked_first.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub em: f64,
    pub f1: f64,
    pub precision_at_1: Option<f64>,
    pub n_examples: usize,
}

impl MetricReport {
    /// Means of per-example `(em, f1)` pairs. Empty input gives zeros.
    pub fn from_scores(scores: &[(f64, f64)]) -> Self {
        let n = scores.len();
        let mean = |f: fn(&(f64, f64)) -> f64| {
            if n == 0 {
                0.0
            } else {
                scores.iter().map(f).sum::<f64>() / n as f64
            }
        };
        Self {
            em: mean(|s| s.0),
            f1: mean(|s| s.1),
            precision_at_1: None,
            n_examples: n,
        }
    }

    pub fn with_precision_at_1(mut self, p: f64) -> Self {
        self.precision_at_1 = Some(p);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}
