//! SQuAD 1.1 JSON ingestion (`data → paragraphs → qas → answers`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::normalize_answer;
use super::tokenize::tokenize;
use super::{QAExample, SourceText, Span};
use crate::error::Result;

#[derive(Deserialize)]
struct SquadFile {
    data: Vec<Article>,
}

#[derive(Deserialize)]
struct Article {
    paragraphs: Vec<Paragraph>,
}

#[derive(Deserialize)]
struct Paragraph {
    context: String,
    qas: Vec<Qa>,
}

#[derive(Deserialize)]
struct Qa {
    id: String,
    question: String,
    answers: Vec<RawAnswer>,
}

#[derive(Deserialize)]
struct RawAnswer {
    text: String,
    answer_start: usize,
}

/// Loaded examples with the bookkeeping needed to reconcile counts.
#[derive(Clone, Debug, Serialize)]
pub struct SquadLoad {
    #[serde(skip)]
    pub examples: Vec<QAExample>,
    /// Question entries in the file.
    pub raw_questions: usize,
    /// Questions dropped because no answer sat on token boundaries.
    pub dropped_questions: usize,
    pub raw_answers: usize,
    pub aligned_answers: usize,
}

impl SquadLoad {
    pub fn alignment_rate(&self) -> f64 {
        if self.raw_answers == 0 {
            return 1.0;
        }
        self.aligned_answers as f64 / self.raw_answers as f64
    }
}

pub fn load_squad(path: &Path) -> Result<SquadLoad> {
    parse_squad(&std::fs::read_to_string(path)?)
}

pub fn parse_squad(json: &str) -> Result<SquadLoad> {
    let file: SquadFile = serde_json::from_str(json)?;
    let mut load = SquadLoad {
        examples: Vec::new(),
        raw_questions: 0,
        dropped_questions: 0,
        raw_answers: 0,
        aligned_answers: 0,
    };
    for para in file.data.iter().flat_map(|a| &a.paragraphs) {
        let tokens = tokenize(&para.context);
        let offsets: Vec<(usize, usize)> = tokens.iter().map(|t| (t.begin, t.end)).collect();
        let passage: Vec<String> = tokens.iter().map(|t| t.text.clone()).collect();
        for qa in &para.qas {
            load.raw_questions += 1;
            load.raw_answers += qa.answers.len();
            let mut spans = Vec::new();
            let mut texts = Vec::new();
            let mut unaligned = Vec::new();
            for ans in &qa.answers {
                match align(&offsets, ans) {
                    Some(span) => {
                        load.aligned_answers += 1;
                        spans.push(span);
                        texts.push(ans.text.clone());
                    }
                    None => unaligned.push(ans.text.clone()),
                }
            }
            if spans.is_empty() {
                load.dropped_questions += 1;
                continue;
            }
            load.examples.push(QAExample {
                id: qa.id.clone(),
                passage: passage.clone(),
                question: tokenize(&qa.question).into_iter().map(|t| t.text).collect(),
                spans,
                texts,
                unaligned_texts: unaligned,
                source: Some(SourceText {
                    context: para.context.clone(),
                    offsets: offsets.clone(),
                }),
            });
        }
    }
    Ok(load)
}

/// Token span whose first token starts exactly where the answer starts and
/// whose last token ends exactly where it ends. Surrounding whitespace in
/// the answer text is ignored.
fn align(offsets: &[(usize, usize)], ans: &RawAnswer) -> Option<Span> {
    let lead = ans.text.chars().take_while(|c| c.is_whitespace()).count();
    let trimmed = ans.text.trim().chars().count();
    if trimmed == 0 {
        return None;
    }
    let begin = ans.answer_start + lead;
    let end = begin + trimmed;
    let start = offsets.iter().position(|&(b, _)| b == begin)?;
    let last = offsets[start..].iter().position(|&(_, e)| e == end)? + start;
    Some(Span::new(start, last))
}

/// Outcome of re-deriving every aligned answer's text from its token span.
#[derive(Clone, Debug, Serialize)]
pub struct AlignmentAudit {
    pub checked: usize,
    pub matching: usize,
}

impl AlignmentAudit {
    pub fn rate(&self) -> f64 {
        if self.checked == 0 {
            return 1.0;
        }
        self.matching as f64 / self.checked as f64
    }
}

/// Counts aligned answers whose span text normalises to the gold text.
pub fn alignment_audit(examples: &[QAExample]) -> AlignmentAudit {
    let mut audit = AlignmentAudit {
        checked: 0,
        matching: 0,
    };
    for ex in examples {
        for (span, text) in ex.spans.iter().zip(&ex.texts) {
            audit.checked += 1;
            if normalize_answer(&ex.span_text(*span)) == normalize_answer(text) {
                audit.matching += 1;
            }
        }
    }
    audit
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{"version": "1.1", "data": [{"title": "t", "paragraphs": [
        {"context": "The Broncos beat the Panthers 24–10 in Santa Clara.",
         "qas": [
           {"id": "q1", "question": "Who won?", "answers": [
             {"answer_start": 4, "text": "Broncos"},
             {"answer_start": 0, "text": "The Broncos"}]},
           {"id": "q2", "question": "Score?", "answers": [
             {"answer_start": 31, "text": "4–10"}]},
           {"id": "q3", "question": "Where?", "answers": [
             {"answer_start": 39, "text": "Santa Clara"}]}
         ]}]}]}"#;

    #[test]
    fn answers_on_token_boundaries_map_to_exact_spans() {
        let load = parse_squad(SAMPLE).unwrap();
        assert_eq!(load.raw_questions, 3);
        assert_eq!(load.raw_answers, 4);
        assert_eq!(load.aligned_answers, 3);
        assert_eq!(load.dropped_questions, 1);
        let q1 = &load.examples[0];
        assert_eq!(q1.spans, vec![Span::new(1, 1), Span::new(0, 1)]);
        assert_eq!(q1.span_text(q1.spans[1]), "The Broncos");
        let q3 = &load.examples[1];
        assert_eq!(q3.id, "q3");
        assert_eq!(q3.span_text(q3.spans[0]), "Santa Clara");
        assert_eq!(alignment_audit(&load.examples).rate(), 1.0);
    }

    #[test]
    fn malformed_and_incomplete_files_are_distinguished() {
        let err = parse_squad("{\"data\": [").unwrap_err();
        assert!(matches!(err, crate::Error::Parse { line: 1, .. }), "{err}");
        let err = parse_squad(r#"{"data": [{"paragraphs": [{"context": "x"}]}]}"#).unwrap_err();
        assert!(matches!(err, crate::Error::Schema(_)), "{err}");
    }
}
