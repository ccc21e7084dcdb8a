use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::layers::LayerConfig;
use crate::slicing::SliceMode;
use crate::stopping::StopConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    /// Generated in memory from `data.synthetic`.
    #[default]
    Synthetic,
    /// Files written by `gen-data` (one JSON record per line).
    Jsonl,
    /// SQuAD v1 JSON files.
    Squad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub train_path: Option<PathBuf>,
    pub dev_path: Option<PathBuf>,
    /// Dev set size when generating synthetic data.
    pub num_dev: usize,
    /// Seed of the synthetic dev set; train uses `synthetic.seed`.
    pub dev_seed: u64,
    pub synthetic: SynthConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Synthetic,
            train_path: None,
            dev_path: None,
            num_dev: 400,
            dev_seed: 1_000_003,
            synthetic: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SliceConfig {
    pub slice_size: usize,
    pub mode: SliceMode,
}

impl Default for SliceConfig {
    fn default() -> Self {
        SliceConfig {
            slice_size: 16,
            mode: SliceMode::SlicedPrediction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Sum the answer loss over every slice prefix that already shows the answer.
    pub greedy_training: bool,
    /// Train the stop head jointly and stop reading at inference.
    pub early_stopping: bool,
    /// Longest span (tokens) the decoder may return.
    pub max_answer_len: usize,
    /// Global-norm gradient clip; 0 disables.
    pub clip_norm: f64,
    /// Stop after this many epochs without a dev improvement; 0 disables.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            max_epochs: 20,
            seed: 1,
            greedy_training: false,
            early_stopping: false,
            max_answer_len: 4,
            clip_norm: 5.0,
            patience: 0,
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub layers: LayerConfig,
    pub slicing: SliceConfig,
    pub stop: StopConfig,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataConfig::default(),
            layers: LayerConfig::default(),
            slicing: SliceConfig::default(),
            stop: StopConfig::default(),
            train: TrainConfig::default(),
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.layers.validate()?;
        self.stop.validate()?;
        if self.slicing.slice_size == 0 {
            return Err(Error::Config("slicing.slice_size must be positive".into()));
        }
        let t = &self.train;
        if t.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if t.learning_rate.is_nan() || t.learning_rate < 0.0 {
            return Err(Error::Config(format!("train.learning_rate {} must be >= 0", t.learning_rate)));
        }
        if t.max_answer_len == 0 {
            return Err(Error::Config("train.max_answer_len must be positive".into()));
        }
        match self.data.source {
            DataSource::Synthetic => self.data.synthetic.validate(),
            DataSource::Jsonl | DataSource::Squad => {
                if self.data.train_path.is_none() || self.data.dev_path.is_none() {
                    Err(Error::Config("data.train_path and data.dev_path are required for file sources".into()))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Applies `dotted.key=value` overrides, parsing each value as TOML and
    /// falling back to a bare string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc = toml::Value::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let value = parse_value(raw.trim());
            set_path(&mut doc, key.trim(), value)?;
        }
        let cfg: RunConfig = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(doc: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key}: {part} is not a table")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Err(Error::Config(format!("empty override key {key:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
        assert_eq!(RunConfig::from_toml_str("").unwrap(), cfg);
    }

    #[test]
    fn overrides() {
        let cfg = RunConfig::default()
            .with_overrides(&[
                "slicing.mode=step-transfer",
                "slicing.slice_size=4",
                "train.learning_rate=0.01",
                "train.early_stopping=true",
                "output_dir=/tmp/x",
            ])
            .unwrap();
        assert_eq!(cfg.slicing.mode, SliceMode::StepTransfer);
        assert_eq!(cfg.slicing.slice_size, 4);
        assert_eq!(cfg.train.learning_rate, 0.01);
        assert!(cfg.train.early_stopping);
        assert_eq!(cfg.output_dir, PathBuf::from("/tmp/x"));
        assert!(RunConfig::default().with_overrides(&["train.nope=1"]).is_err());
        assert!(RunConfig::default().with_overrides(&["slicing.slice_size=0"]).is_err());
        assert!(RunConfig::default().with_overrides(&["novalue"]).is_err());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(RunConfig::from_toml_str("[train]\nlr = 1").is_err());
        assert!(RunConfig::from_toml_str("[stop]\ndist_threshold = 1").is_err());
    }
}
