/// A token and its `[begin, end)` character range in the source string.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub begin: usize,
    pub end: usize,
}

/// Splits on whitespace and around punctuation. Runs of alphanumeric
/// characters form one token; every other non-space character stands alone.
/// Offsets count characters, not bytes.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut word: Option<(usize, String)> = None;
    let mut count = 0;
    for (pos, c) in text.chars().enumerate() {
        count = pos + 1;
        if c.is_alphanumeric() {
            word.get_or_insert_with(|| (pos, String::new())).1.push(c);
            continue;
        }
        if let Some((begin, w)) = word.take() {
            out.push(Token {
                text: w,
                begin,
                end: pos,
            });
        }
        if !c.is_whitespace() {
            out.push(Token {
                text: c.to_string(),
                begin: pos,
                end: pos + 1,
            });
        }
    }
    if let Some((begin, w)) = word {
        out.push(Token {
            text: w,
            begin,
            end: count,
        });
    }
    out
}
