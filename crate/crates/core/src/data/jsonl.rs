//! Line-delimited JSON datasets: one `{id, passage, question, answers}`
//! record per line, with `answers: [{start, end, text}]`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{QAExample, Span};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    passage: Vec<String>,
    question: Vec<String>,
    answers: Vec<Answer>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Answer {
    start: usize,
    end: usize,
    text: String,
}

pub fn write_jsonl(path: &Path, data: &[QAExample]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for ex in data {
        let rec = Record {
            id: ex.id.clone(),
            passage: ex.passage.clone(),
            question: ex.question.clone(),
            answers: ex
                .spans
                .iter()
                .zip(&ex.texts)
                .map(|(s, t)| Answer {
                    start: s.start,
                    end: s.end,
                    text: t.clone(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<QAExample>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| match Error::from(e) {
            Error::Parse {
                column, message, ..
            } => Error::Parse {
                line: i + 1,
                column,
                message,
            },
            Error::Schema(m) => Error::Schema(format!("line {}: {m}", i + 1)),
            other => other,
        })?;
        let ex = QAExample {
            id: rec.id,
            passage: rec.passage,
            question: rec.question,
            spans: rec.answers.iter().map(|a| Span::new(a.start, a.end)).collect(),
            texts: rec.answers.into_iter().map(|a| a.text).collect(),
            unaligned_texts: Vec::new(),
            source: None,
        };
        ex.validate()
            .map_err(|e| Error::Schema(format!("line {}: {e}", i + 1)))?;
        out.push(ex);
    }
    Ok(out)
}
