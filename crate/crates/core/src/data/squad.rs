use std::path::Path;

use log::info;
use serde_json::Value;

use super::TextExample;
use crate::error::{Error, Result};

/// Examples that aligned, plus the number of questions dropped because none
/// of their answers could be mapped onto context tokens.
#[derive(Debug, Clone, Default)]
pub struct Loaded {
    pub examples: Vec<TextExample>,
    pub dropped: usize,
}

pub fn load_squad_v1(path: impl AsRef<Path>) -> Result<Loaded> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let loaded = parse_squad_v1(&text)?;
    info!(
        "{}: {} examples, {} dropped on alignment",
        path.display(),
        loaded.examples.len(),
        loaded.dropped
    );
    Ok(loaded)
}

fn parse_err(path: &str, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        msg: msg.into(),
    }
}

fn field<'a>(v: &'a Value, key: &str, at: &str) -> Result<&'a Value> {
    v.get(key)
        .ok_or_else(|| parse_err(at, format!("missing field \"{key}\"")))
}

fn array<'a>(v: &'a Value, key: &str, at: &str) -> Result<&'a Vec<Value>> {
    field(v, key, at)?
        .as_array()
        .ok_or_else(|| parse_err(&format!("{at}.{key}"), "expected array"))
}

fn string(v: &Value, key: &str, at: &str) -> Result<String> {
    field(v, key, at)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| parse_err(&format!("{at}.{key}"), "expected string"))
}

/// Parses the public SQuAD v1 layout: `data → paragraphs → qas → answers`.
pub fn parse_squad_v1(text: &str) -> Result<Loaded> {
    let root: Value = serde_json::from_str(text).map_err(|e| parse_err("$", e.to_string()))?;
    let mut out = Loaded::default();
    for (a, article) in array(&root, "data", "$")?.iter().enumerate() {
        let at = format!("$.data[{a}]");
        for (p, para) in array(article, "paragraphs", &at)?.iter().enumerate() {
            let at = format!("{at}.paragraphs[{p}]");
            let context = string(para, "context", &at)?;
            for (q, qa) in array(para, "qas", &at)?.iter().enumerate() {
                let at = format!("{at}.qas[{q}]");
                let id = string(qa, "id", &at)?;
                let question = string(qa, "question", &at)?;
                let mut answers = Vec::new();
                for (k, ans) in array(qa, "answers", &at)?.iter().enumerate() {
                    let at = format!("{at}.answers[{k}]");
                    let text = string(ans, "text", &at)?;
                    let start = field(ans, "answer_start", &at)?
                        .as_u64()
                        .ok_or_else(|| parse_err(&format!("{at}.answer_start"), "expected non-negative integer"))?;
                    answers.push((text, start as usize));
                }
                match TextExample::build(id, question, context.clone(), &answers) {
                    Ok(ex) => out.examples.push(ex),
                    Err(_) => out.dropped += 1,
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = r#"{
      "version": "1.1",
      "data": [{
        "title": "T",
        "paragraphs": [{
          "context": "Paris is the capital of France.",
          "qas": [
            {"id": "q1", "question": "What is the capital of France?",
             "answers": [{"text": "Paris", "answer_start": 0},
                         {"text": "Paris", "answer_start": 0}]},
            {"id": "q2", "question": "Capital of what?",
             "answers": [{"text": "France", "answer_start": 24}]},
            {"id": "q3", "question": "Broken?",
             "answers": [{"text": "Berlin", "answer_start": 3}]}
          ]
        }]
      }]
    }"#;

    #[test]
    fn parses_fixture() {
        let loaded = parse_squad_v1(FIXTURE).unwrap();
        assert_eq!(loaded.dropped, 1);
        assert_eq!(loaded.examples.len(), 2);
        let q1 = &loaded.examples[0];
        assert_eq!(q1.gold_spans, vec![(0, 0)]);
        assert_eq!(q1.answers, vec!["Paris".to_string()]);
        let q2 = &loaded.examples[1];
        assert_eq!(q2.gold_spans, vec![(5, 5)]);
        assert_eq!(q2.context_tokens[5].text, "france");
    }

    #[test]
    fn missing_field_reports_path() {
        let bad = r#"{"data": [{"paragraphs": [{"context": "x", "qas": [{"question": "q", "answers": []}]}]}]}"#;
        match parse_squad_v1(bad) {
            Err(Error::Parse { path, msg }) => {
                assert_eq!(path, "$.data[0].paragraphs[0].qas[0]");
                assert!(msg.contains("\"id\""));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_squad_v1("{not json"), Err(Error::Parse { .. })));
    }
}
