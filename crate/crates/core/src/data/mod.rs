//! Question/answer examples, synthetic and SQuAD ingestion, and span metrics.

mod example;
mod jsonl;
mod metrics;
mod needle;
mod squad;
mod tokenize;

pub use example::{QAExample, SourceText, Span};
pub use jsonl::{read_jsonl, write_jsonl};
pub use metrics::{
    evaluate, exact_match, f1_score, normalize_answer, EvalReport, LengthBin, LengthBins,
};
pub use needle::{generate_needle_task, token_name, NeedleConfig};
pub use squad::{alignment_audit, load_squad, parse_squad, AlignmentAudit, SquadLoad};
pub use tokenize::{tokenize, Token};
