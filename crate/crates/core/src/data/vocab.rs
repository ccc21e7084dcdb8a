use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{QAExample, TextExample};

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// Token ↔ id map; ids 0 and 1 are reserved for padding and unknowns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        Vocab::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Most frequent tokens first (ties broken lexicographically), capped at
    /// `max_size` entries including the two reserved ones.
    pub fn build<'a, I>(tokens: I, max_size: Option<usize>) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut list = vec!["<pad>".to_string(), "<unk>".to_string()];
        let cap = max_size.unwrap_or(usize::MAX).max(2);
        list.extend(ranked.into_iter().take(cap - 2).map(|(t, _)| t.to_string()));
        Self::from_tokens(list)
    }

    pub fn from_examples(examples: &[TextExample], max_size: Option<usize>) -> Self {
        Self::build(
            examples.iter().flat_map(|e| {
                e.question_tokens
                    .iter()
                    .chain(&e.context_tokens)
                    .map(|t| t.text.as_str())
            }),
            max_size,
        )
    }

    /// Rebuilds from the id-ordered token list (reserved entries included).
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, ex: &TextExample) -> QAExample {
        QAExample {
            id: ex.id.clone(),
            question_tokens: ex.question_tokens.iter().map(|t| self.id(&t.text)).collect(),
            context_tokens: ex.context_tokens.iter().map(|t| self.id(&t.text)).collect(),
            gold_spans: ex.gold_spans.clone(),
            context: ex.context.clone(),
            answers: ex.answers.clone(),
            offsets: ex.context_tokens.iter().map(|t| (t.start, t.end)).collect(),
        }
    }

    pub fn encode_all(&self, examples: &[TextExample]) -> Vec<QAExample> {
        examples.iter().map(|e| self.encode(e)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_and_unknowns() {
        let v = Vocab::build(["b", "a", "b", "c", "b", "a"], None);
        assert_eq!(v.token(PAD), Some("<pad>"));
        assert_eq!(v.token(UNK), Some("<unk>"));
        assert_eq!(v.id("b"), 2);
        assert_eq!(v.id("a"), 3);
        assert_eq!(v.id("c"), 4);
        assert_eq!(v.id("zzz"), UNK);
        assert_eq!(v.id("<pad>"), UNK);
        for id in 2..v.len() {
            assert_eq!(v.id(v.token(id).unwrap()), id);
        }
    }

    #[test]
    fn cap_keeps_most_frequent() {
        let v = Vocab::build(["x", "y", "y", "z", "z", "z"], Some(4));
        assert_eq!(v.len(), 4);
        assert_eq!(v.id("x"), UNK);
    }
}
