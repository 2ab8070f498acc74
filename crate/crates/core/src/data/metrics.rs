//! Exact match and token-overlap F1 with the standard answer normalisation,
//! plus a breakdown by gold answer length.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{QAExample, Span};
use crate::error::{Error, Result};

/// Lowercase, drop ASCII punctuation, drop the articles a/an/the, collapse
/// whitespace.
pub fn normalize_answer(text: &str) -> String {
    static ARTICLES: OnceLock<Regex> = OnceLock::new();
    let articles = ARTICLES.get_or_init(|| Regex::new(r"\b(a|an|the)\b").expect("valid regex"));
    let lower = text.to_lowercase();
    let no_punct: String = lower.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    let no_articles = articles.replace_all(&no_punct, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// 1 when the normalised prediction equals any normalised gold answer.
pub fn exact_match<S: AsRef<str>>(prediction: &str, golds: &[S]) -> f64 {
    let p = normalize_answer(prediction);
    let hit = golds.iter().any(|g| normalize_answer(g.as_ref()) == p);
    if hit {
        1.0
    } else {
        0.0
    }
}

fn token_f1(prediction: &str, gold: &str) -> f64 {
    let p = normalize_answer(prediction);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() || gt.is_empty() {
        return if pt.is_empty() && gt.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut same = 0usize;
    for t in &pt {
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
    let precision = same as f64 / pt.len() as f64;
    let recall = same as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best bag-of-tokens F1 against any gold answer.
pub fn f1_score<S: AsRef<str>>(prediction: &str, golds: &[S]) -> f64 {
    golds
        .iter()
        .map(|g| token_f1(prediction, g.as_ref()))
        .fold(0.0, f64::max)
}

/// Answer-length buckets: one per length up to the last edge, then one
/// open-ended bucket above it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthBins {
    pub edges: Vec<usize>,
}

impl LengthBins {
    /// `1, 2, …, max` and `max+1` and longer.
    pub fn up_to(max: usize) -> Self {
        Self {
            edges: (1..=max).collect(),
        }
    }

    fn bucket(&self, len: usize) -> (usize, usize, Option<usize>) {
        let mut lo = 1;
        for (i, &hi) in self.edges.iter().enumerate() {
            if len <= hi {
                return (i, lo, Some(hi));
            }
            lo = hi + 1;
        }
        (self.edges.len(), lo, None)
    }
}

impl Default for LengthBins {
    fn default() -> Self {
        Self::up_to(10)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthBin {
    pub min_len: usize,
    /// `None` for the open-ended last bucket.
    pub max_len: Option<usize>,
    pub count: usize,
    pub em: f64,
    pub f1: f64,
}

impl LengthBin {
    pub fn label(&self) -> String {
        match self.max_len {
            Some(hi) if hi == self.min_len => hi.to_string(),
            Some(hi) => format!("{}-{hi}", self.min_len),
            None => format!("{}+", self.min_len),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Percentages over every example in the dataset.
    pub em: f64,
    pub f1: f64,
    pub count: usize,
    /// Examples without a prediction; they score 0.
    pub missing: usize,
    /// Non-empty buckets keyed by shortest gold length.
    pub bins: Vec<LengthBin>,
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self).map_err(Error::from)?)?;
        Ok(())
    }

    /// `length_bin,min_len,max_len,count,em,f1`, one row per bucket.
    pub fn write_bins_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["length_bin", "min_len", "max_len", "count", "em", "f1"])?;
        for b in &self.bins {
            w.write_record([
                b.label(),
                b.min_len.to_string(),
                b.max_len.map(|m| m.to_string()).unwrap_or_default(),
                b.count.to_string(),
                format!("{:.4}", b.em),
                format!("{:.4}", b.f1),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scores `predictions` (example id → predicted span) against `data`.
pub fn evaluate(
    predictions: &BTreeMap<String, Span>,
    data: &[QAExample],
    bins: &LengthBins,
) -> Result<EvalReport> {
    if predictions.is_empty() {
        return Err(Error::Evaluation("no predictions to evaluate".into()));
    }
    if data.is_empty() {
        return Err(Error::Evaluation("empty dataset".into()));
    }
    let by_id: HashMap<&str, &QAExample> = data.iter().map(|e| (e.id.as_str(), e)).collect();
    if let Some(unknown) = predictions.keys().find(|id| !by_id.contains_key(id.as_str())) {
        return Err(Error::Evaluation(format!("prediction for unknown id `{unknown}`")));
    }

    // (min, max, count, em sum, f1 sum) per bucket index.
    let mut acc: BTreeMap<usize, (usize, Option<usize>, usize, f64, f64)> = BTreeMap::new();
    let (mut em_sum, mut f1_sum, mut missing) = (0.0, 0.0, 0);
    for ex in data {
        let (em, f1) = match predictions.get(&ex.id) {
            Some(&span) => {
                if span.start > span.end || span.end >= ex.passage.len() {
                    return Err(Error::Evaluation(format!(
                        "prediction {}..={} for `{}` is outside the passage",
                        span.start, span.end, ex.id
                    )));
                }
                let text = ex.span_text(span);
                let golds = ex.gold_texts();
                (exact_match(&text, &golds), f1_score(&text, &golds))
            }
            None => {
                missing += 1;
                (0.0, 0.0)
            }
        };
        em_sum += em;
        f1_sum += f1;
        let (i, lo, hi) = bins.bucket(ex.shortest_gold_len());
        let e = acc.entry(i).or_insert((lo, hi, 0, 0.0, 0.0));
        e.2 += 1;
        e.3 += em;
        e.4 += f1;
    }
    let n = data.len() as f64;
    Ok(EvalReport {
        em: 100.0 * em_sum / n,
        f1: 100.0 * f1_sum / n,
        count: data.len(),
        missing,
        bins: acc
            .into_values()
            .map(|(min_len, max_len, count, em, f1)| LengthBin {
                min_len,
                max_len,
                count,
                em: 100.0 * em / count as f64,
                f1: 100.0 * f1 / count as f64,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalisation_rules() {
        assert_eq!(normalize_answer("The Cat!"), "cat");
        assert_eq!(normalize_answer("a  dog"), "dog");
        assert_eq!(normalize_answer("  Theater, an arena "), "theater arena");
        assert_eq!(normalize_answer(""), "");
    }

    #[test]
    fn match_and_overlap() {
        assert_eq!(exact_match("the cat", &["The cat."]), 1.0);
        assert_eq!(exact_match("cat sat", &["the cat"]), 0.0);
        assert_eq!(f1_score("cat sat", &["the cat"]), 2.0 / 3.0);
        assert_eq!(f1_score("cat sat", &["black cat"]), 0.5);
        assert_eq!(f1_score("", &[""]), 1.0);
        assert_eq!(f1_score("dog", &["the cat"]), 0.0);
        assert_eq!(f1_score("black cat", &["black cat"]), 1.0);
        assert_eq!(f1_score("the", &["a"]), 1.0);
        assert_eq!(f1_score("the", &["cat"]), 0.0);
        assert_eq!(f1_score("x", &["y", "x z"]), 2.0 / 3.0);
    }

    #[test]
    fn bucket_edges() {
        let bins = LengthBins {
            edges: vec![1, 3],
        };
        assert_eq!(bins.bucket(1), (0, 1, Some(1)));
        assert_eq!(bins.bucket(3), (1, 2, Some(3)));
        assert_eq!(bins.bucket(9), (2, 4, None));
    }
}
