//! Tokenization, dataset loading, and the synthetic key-value retrieval task.

mod squad;
mod synth;
mod tokenize;
mod vocab;

pub use squad::{load_squad_v1, parse_squad_v1, Loaded};
pub use synth::{gen_synthetic, read_jsonl, write_jsonl, AnswerRecord, SynthConfig, SynthRecord};
pub use tokenize::{align_char_span, detokenize, tokenize, tokenize_with_offsets, Token};
pub use vocab::{Vocab, PAD, UNK};

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// A tokenized question/context pair before vocabulary lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct TextExample {
    pub id: String,
    pub question: String,
    pub context: String,
    pub question_tokens: Vec<Token>,
    pub context_tokens: Vec<Token>,
    /// Distinct gold answer strings.
    pub answers: Vec<String>,
    /// Inclusive token spans, deduplicated and sorted.
    pub gold_spans: Vec<(usize, usize)>,
}

impl TextExample {
    /// Tokenizes and aligns every `(text, answer_start)` pair; fails if no
    /// answer aligns.
    pub fn build(id: String, question: String, context: String, answers: &[(String, usize)]) -> Result<Self> {
        let question_tokens = tokenize_with_offsets(&question);
        let context_tokens = tokenize_with_offsets(&context);
        let mut spans = BTreeSet::new();
        let mut texts = Vec::new();
        let mut last_err = None;
        for (text, start) in answers {
            match align_char_span(&context, &context_tokens, *start, text) {
                Ok(span) => {
                    spans.insert(span);
                    if !texts.contains(text) {
                        texts.push(text.clone());
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
        if spans.is_empty() {
            return Err(last_err.unwrap_or_else(|| Error::Alignment {
                answer: String::new(),
                start: 0,
            }));
        }
        if question_tokens.is_empty() || context_tokens.is_empty() {
            return Err(Error::invalid("example", format!("{id}: empty question or context")));
        }
        Ok(TextExample {
            id,
            question,
            context,
            question_tokens,
            context_tokens,
            answers: texts,
            gold_spans: spans.into_iter().collect(),
        })
    }
}

/// Model-ready example: token ids plus the raw strings needed for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct QAExample {
    pub id: String,
    pub question_tokens: Vec<usize>,
    pub context_tokens: Vec<usize>,
    /// Inclusive token spans, sorted, non-empty.
    pub gold_spans: Vec<(usize, usize)>,
    pub context: String,
    pub answers: Vec<String>,
    /// Char extents of the context tokens.
    pub offsets: Vec<(usize, usize)>,
}

impl QAExample {
    pub fn context_len(&self) -> usize {
        self.context_tokens.len()
    }

    /// End of the earliest-ending gold span.
    pub fn answer_end(&self) -> usize {
        self.gold_spans.iter().map(|s| s.1).min().expect("non-empty gold spans")
    }

    /// Source text covered by an inclusive token span.
    pub fn span_text(&self, start: usize, end: usize) -> String {
        let (a, b) = (self.offsets[start].0, self.offsets[end].1);
        self.context.chars().skip(a).take(b - a).collect()
    }

    /// Copy with the context cut to its first `len` tokens; spans that no
    /// longer fit are dropped (the result may have none).
    pub fn truncated(&self, len: usize) -> QAExample {
        let len = len.min(self.context_len());
        QAExample {
            id: self.id.clone(),
            question_tokens: self.question_tokens.clone(),
            context_tokens: self.context_tokens[..len].to_vec(),
            gold_spans: self.gold_spans.iter().copied().filter(|s| s.1 < len).collect(),
            context: self.context.clone(),
            answers: self.answers.clone(),
            offsets: self.offsets[..len].to_vec(),
        }
    }

    pub fn check(&self) -> Result<()> {
        let lc = self.context_len();
        if lc == 0 || self.question_tokens.is_empty() {
            return Err(Error::invalid("example", format!("{}: empty question or context", self.id)));
        }
        if self.gold_spans.is_empty() || self.gold_spans.iter().any(|&(s, e)| s > e || e >= lc) {
            return Err(Error::invalid("example", format!("{}: bad gold spans {:?}", self.id, self.gold_spans)));
        }
        Ok(())
    }
}
