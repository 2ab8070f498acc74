use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclusive token span `start..=end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Original passage text with per-token character ranges, kept so answers
/// can be cut from the source rather than re-joined from tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceText {
    pub context: String,
    /// `[begin, end)` in characters, one per passage token.
    pub offsets: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QAExample {
    pub id: String,
    pub passage: Vec<String>,
    pub question: Vec<String>,
    /// Gold spans; `texts[i]` is the answer string of `spans[i]`.
    pub spans: Vec<Span>,
    pub texts: Vec<String>,
    /// Gold answers that exist as text but could not be placed on token
    /// boundaries. They count for metrics only.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unaligned_texts: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceText>,
}

impl QAExample {
    pub fn validate(&self) -> Result<()> {
        if self.spans.is_empty() {
            return Err(Error::Schema(format!("example `{}` has no gold span", self.id)));
        }
        if self.spans.len() != self.texts.len() {
            return Err(Error::Schema(format!(
                "example `{}` has {} spans but {} texts",
                self.id,
                self.spans.len(),
                self.texts.len()
            )));
        }
        let n = self.passage.len();
        for s in &self.spans {
            if s.start > s.end || s.end >= n {
                return Err(Error::Schema(format!(
                    "example `{}`: span {}..={} outside a passage of {n} tokens",
                    self.id, s.start, s.end
                )));
            }
        }
        if let Some(src) = &self.source {
            if src.offsets.len() != n {
                return Err(Error::Schema(format!(
                    "example `{}`: {} offsets for {n} tokens",
                    self.id,
                    src.offsets.len()
                )));
            }
        }
        Ok(())
    }

    /// The gold span used as the training target.
    pub fn primary_span(&self) -> Span {
        self.spans[0]
    }

    /// Every gold answer string, aligned or not.
    pub fn gold_texts(&self) -> Vec<&str> {
        self.texts
            .iter()
            .chain(&self.unaligned_texts)
            .map(String::as_str)
            .collect()
    }

    /// Text covered by `span`: cut from the source when available, tokens
    /// joined by single spaces otherwise.
    pub fn span_text(&self, span: Span) -> String {
        if let Some(src) = &self.source {
            let begin = src.offsets[span.start].0;
            let end = src.offsets[span.end].1;
            return src.context.chars().skip(begin).take(end - begin).collect();
        }
        self.passage[span.start..=span.end].join(" ")
    }

    /// Length in tokens of the shortest gold span.
    pub fn shortest_gold_len(&self) -> usize {
        self.spans.iter().map(Span::len).min().unwrap_or(0)
    }
}
