use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TextExample;
use crate::error::{Error, Result};

/// Key-value retrieval task. Each context plants `pairs_per_context`
/// patterns `key , value…` among filler words; the question names one key and
/// the answer is its values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Number of distinct word types, split between keys (1/4), values (1/4)
    /// and fillers (the rest).
    pub vocab_size: usize,
    pub num_examples: usize,
    pub min_context_len: usize,
    pub max_context_len: usize,
    pub pairs_per_context: usize,
    /// Probability that a filler slot holds a stray value word instead.
    pub distractor_rate: f64,
    pub min_value_len: usize,
    pub max_value_len: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab_size: 190,
            num_examples: 2000,
            min_context_len: 60,
            max_context_len: 240,
            pairs_per_context: 3,
            distractor_rate: 0.2,
            min_value_len: 1,
            max_value_len: 3,
            seed: 1,
        }
    }
}

impl SynthConfig {
    fn num_keys(&self) -> usize {
        self.vocab_size / 4
    }

    fn num_values(&self) -> usize {
        self.vocab_size / 4
    }

    fn num_fillers(&self) -> usize {
        self.vocab_size - self.num_keys() - self.num_values()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("synthetic data: {msg}")));
        if self.vocab_size < 8 {
            return bad(format!("vocab_size {} < 8", self.vocab_size));
        }
        if self.pairs_per_context == 0 || self.pairs_per_context > self.num_keys() {
            return bad(format!(
                "pairs_per_context must be in 1..={} for vocab_size {}",
                self.num_keys(),
                self.vocab_size
            ));
        }
        if self.min_value_len == 0 || self.min_value_len > self.max_value_len {
            return bad(format!("value length range {}..={}", self.min_value_len, self.max_value_len));
        }
        if self.min_context_len == 0 || self.min_context_len > self.max_context_len {
            return bad(format!("context length range {}..={}", self.min_context_len, self.max_context_len));
        }
        let need = self.pairs_per_context * (2 + self.max_value_len);
        if need > self.min_context_len {
            return bad(format!(
                "{} pairs of up to {} tokens do not fit in {} tokens",
                self.pairs_per_context,
                2 + self.max_value_len,
                self.min_context_len
            ));
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) {
            return bad(format!("distractor_rate {} outside [0, 1]", self.distractor_rate));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub text: String,
    pub answer_start: usize,
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthRecord {
    pub id: String,
    pub question: String,
    pub context: String,
    pub answers: Vec<AnswerRecord>,
}

impl SynthRecord {
    pub fn to_example(&self) -> Result<TextExample> {
        let answers: Vec<(String, usize)> = self
            .answers
            .iter()
            .map(|a| (a.text.clone(), a.answer_start))
            .collect();
        TextExample::build(self.id.clone(), self.question.clone(), self.context.clone(), &answers)
    }
}

struct Pattern {
    key: usize,
    values: Vec<usize>,
}

impl Pattern {
    fn len(&self) -> usize {
        2 + self.values.len()
    }
}

pub fn gen_synthetic(config: &SynthConfig) -> Result<Vec<SynthRecord>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.num_examples)
        .map(|i| gen_one(config, &mut rng, format!("synth-{}-{i}", config.seed)))
        .collect()
}

fn gen_one(cfg: &SynthConfig, rng: &mut ChaCha8Rng, id: String) -> Result<SynthRecord> {
    let len = rng.gen_range(cfg.min_context_len..=cfg.max_context_len);
    let keys: Vec<usize> = rand::seq::index::sample(rng, cfg.num_keys(), cfg.pairs_per_context).into_vec();
    let patterns: Vec<Pattern> = keys
        .into_iter()
        .map(|key| {
            let n = rng.gen_range(cfg.min_value_len..=cfg.max_value_len);
            let values = (0..n).map(|_| rng.gen_range(0..cfg.num_values())).collect();
            Pattern { key, values }
        })
        .collect();

    let fillers = len - patterns.iter().map(Pattern::len).sum::<usize>();
    let mut units: Vec<Option<usize>> = (0..patterns.len()).map(Some).chain((0..fillers).map(|_| None)).collect();
    units.shuffle(rng);
    let mut words = Vec::with_capacity(len);
    let mut target_start = 0;
    for unit in units {
        match unit {
            Some(p) => {
                if p == 0 {
                    target_start = words.len();
                }
                words.push(key_word(patterns[p].key));
                words.push(",".to_string());
                words.extend(patterns[p].values.iter().map(|&v| value_word(v)));
            }
            None if rng.gen_bool(cfg.distractor_rate) => words.push(value_word(rng.gen_range(0..cfg.num_values()))),
            None => words.push(format!("w{}", rng.gen_range(0..cfg.num_fillers()))),
        }
    }
    let target = &patterns[0];
    let answer_tokens = &words[target_start + 2..target_start + target.len()];
    let answer_start = words[..target_start + 2].iter().map(|w| w.len() + 1).sum();
    Ok(SynthRecord {
        id,
        question: format!("{} ?", key_word(target.key)),
        context: words.join(" "),
        answers: vec![AnswerRecord {
            text: answer_tokens.join(" "),
            answer_start,
        }],
    })
}

fn key_word(k: usize) -> String {
    format!("k{k}")
}

fn value_word(v: usize) -> String {
    format!("v{v}")
}

pub fn write_jsonl(path: impl AsRef<Path>, records: &[SynthRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::invalid("write_jsonl", e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<SynthRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: format!("{}:{}", path.display(), n + 1),
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}
