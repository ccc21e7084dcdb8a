use crate::error::{Error, Result};

/// A token with its character (code point) extent in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric()
}

/// Lowercased whitespace tokens with leading and trailing punctuation split
/// off one character at a time. Offsets are in chars, half-open.
pub fn tokenize_with_offsets(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < chars.len() && !chars[j].is_whitespace() {
            j += 1;
        }
        let (mut lo, mut hi) = (i, j);
        let mut trailing = Vec::new();
        while lo < hi && is_punct(chars[lo]) {
            out.push(make_token(&chars, lo, lo + 1));
            lo += 1;
        }
        while hi > lo && is_punct(chars[hi - 1]) {
            trailing.push(make_token(&chars, hi - 1, hi));
            hi -= 1;
        }
        if lo < hi {
            out.push(make_token(&chars, lo, hi));
        }
        out.extend(trailing.into_iter().rev());
        i = j;
    }
    out
}

fn make_token(chars: &[char], start: usize, end: usize) -> Token {
    let text: String = chars[start..end].iter().collect::<String>().to_lowercase();
    Token { text, start, end }
}

pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with_offsets(text).into_iter().map(|t| t.text).collect()
}

/// Smallest inclusive token range covering `answer` placed at char `answer_start`.
pub fn align_char_span(context: &str, tokens: &[Token], answer_start: usize, answer: &str) -> Result<(usize, usize)> {
    let fail = || Error::Alignment {
        answer: answer.to_string(),
        start: answer_start,
    };
    let len = answer.chars().count();
    let found: String = context.chars().skip(answer_start).take(len).collect();
    if len == 0 || found != answer {
        return Err(fail());
    }
    let answer_end = answer_start + len;
    let first = tokens.iter().position(|t| t.end > answer_start && t.start < answer_end);
    let last = tokens.iter().rposition(|t| t.start < answer_end && t.end > answer_start);
    match (first, last) {
        (Some(a), Some(b)) if a <= b => Ok((a, b)),
        _ => Err(fail()),
    }
}

/// Joins tokens with single spaces.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" ")
}
