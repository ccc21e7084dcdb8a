//! CSV, JSON and SVG outputs for evaluations and run comparisons.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::RunConfig;
use super::eval::{EvalReport, EvalRow, EvalSummary};
use super::train::TrainOutcome;
use super::svg::{bar_chart, line_chart, Series};
use crate::error::{Error, Result};

pub const EXAMPLES_CSV: &str = "examples.csv";
pub const SUMMARY_JSON: &str = "summary.json";
pub const HISTOGRAM_CSV: &str = "consumed_hist.csv";
pub const HISTOGRAM_SVG: &str = "consumed_hist.svg";
pub const READ_RATIO_CSV: &str = "read_ratio.csv";
pub const READ_RATIO_SVG: &str = "read_ratio.svg";
pub const COMPARISON_CSV: &str = "comparison.csv";
pub const COMPARISON_SVG: &str = "comparison.svg";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const HISTORY_CSV: &str = "history.csv";
pub const HISTORY_JSON: &str = "history.json";
pub const HISTORY_SVG: &str = "history.svg";
pub const CONFIG_TOML: &str = "config.toml";

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.display().to_string(),
            msg: format!("{other:?}"),
        },
    }
}

pub(crate) fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Footer rows appended to the per-example table: column means under id
/// `mean` and column sums under id `total`. Text columns are left empty.
pub fn footer_rows(rows: &[EvalRow]) -> [EvalRow; 2] {
    let n = rows.len().max(1) as f64;
    let sum = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>();
    let mean = |f: fn(&EvalRow) -> f64| sum(f) / n;
    let usize_sum = |f: fn(&EvalRow) -> usize| rows.iter().map(f).sum::<usize>();
    let mean_row = EvalRow {
        id: "mean".into(),
        context_len: (usize_sum(|r| r.context_len) as f64 / n).round() as usize,
        answer_end: (usize_sum(|r| r.answer_end) as f64 / n).round() as usize,
        prediction: String::new(),
        f1: mean(|r| r.f1),
        em: mean(|r| r.em),
        prediction_early: String::new(),
        f1_early: mean(|r| r.f1_early),
        em_early: mean(|r| r.em_early),
        consumed: (usize_sum(|r| r.consumed) as f64 / n).round() as usize,
        best_len: (usize_sum(|r| r.best_len) as f64 / n).round() as usize,
        best_f1: mean(|r| r.best_f1),
        extra_ratio: mean(|r| r.extra_ratio),
        best_ratio: mean(|r| r.best_ratio),
        read_ratio: mean(|r| r.read_ratio),
    };
    let total_row = EvalRow {
        id: "total".into(),
        context_len: usize_sum(|r| r.context_len),
        answer_end: usize_sum(|r| r.answer_end),
        prediction: String::new(),
        f1: sum(|r| r.f1),
        em: sum(|r| r.em),
        prediction_early: String::new(),
        f1_early: sum(|r| r.f1_early),
        em_early: sum(|r| r.em_early),
        consumed: usize_sum(|r| r.consumed),
        best_len: usize_sum(|r| r.best_len),
        best_f1: sum(|r| r.best_f1),
        extra_ratio: sum(|r| r.extra_ratio),
        best_ratio: sum(|r| r.best_ratio),
        read_ratio: sum(|r| r.read_ratio),
    };
    [mean_row, total_row]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct HistogramRow {
    bucket_lo: usize,
    bucket_hi: usize,
    early: usize,
    best: usize,
    full: usize,
}

fn histogram_rows(s: &EvalSummary) -> Vec<HistogramRow> {
    let c = &s.consumption;
    let mut keys: Vec<usize> = c
        .hist_early
        .keys()
        .chain(c.hist_best.keys())
        .chain(c.hist_full.keys())
        .copied()
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.into_iter()
        .map(|k| HistogramRow {
            bucket_lo: k,
            bucket_hi: k + c.bucket_width,
            early: c.hist_early.get(&k).copied().unwrap_or(0),
            best: c.hist_best.get(&k).copied().unwrap_or(0),
            full: c.hist_full.get(&k).copied().unwrap_or(0),
        })
        .collect()
}

/// Writes the per-example CSV (with footer rows), the JSON summary, and the
/// consumed-length histogram and read-ratio tables with their charts.
pub fn write_eval_report(dir: &Path, report: &EvalReport) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let path = |name: &str| dir.join(name);
    let mut rows = report.rows.clone();
    rows.extend(footer_rows(&report.rows));
    write_csv(&path(EXAMPLES_CSV), &rows)?;
    write_json(&path(SUMMARY_JSON), &report.summary)?;

    let hist = histogram_rows(&report.summary);
    write_csv(&path(HISTOGRAM_CSV), &hist)?;
    let categories: Vec<String> = hist.iter().map(|h| format!("{}-{}", h.bucket_lo, h.bucket_hi - 1)).collect();
    let series = vec![
        ("early stop".to_string(), hist.iter().map(|h| h.early as f64).collect()),
        ("oracle".to_string(), hist.iter().map(|h| h.best as f64).collect()),
        ("full context".to_string(), hist.iter().map(|h| h.full as f64).collect()),
    ];
    write_text(
        &path(HISTOGRAM_SVG),
        &bar_chart("Consumed length", "tokens", "examples", &categories, &series),
    )?;

    let ratio = &report.summary.consumption.read_ratio_by_length;
    write_csv(&path(READ_RATIO_CSV), ratio)?;
    let mid = |lo: usize, hi: usize| (lo + hi - 1) as f64 / 2.0;
    let chart = line_chart(
        "Read ratio by context length",
        "context length",
        "tokens read / context length",
        &[
            Series {
                name: "early stop".into(),
                points: ratio.iter().map(|r| (mid(r.lo, r.hi), r.mean_read_ratio)).collect(),
            },
            Series {
                name: "oracle".into(),
                points: ratio.iter().map(|r| (mid(r.lo, r.hi), r.mean_best_ratio)).collect(),
            },
        ],
        false,
    );
    write_text(&path(READ_RATIO_SVG), &chart)?;
    Ok([
        EXAMPLES_CSV,
        SUMMARY_JSON,
        HISTOGRAM_CSV,
        HISTOGRAM_SVG,
        READ_RATIO_CSV,
        READ_RATIO_SVG,
    ]
    .iter()
    .map(|n| path(n))
    .collect())
}

/// Writes the best checkpoint, the per-epoch history as CSV, JSON and a
/// dev F1 chart, and the resolved config.
pub fn write_train_outputs(dir: &Path, cfg: &RunConfig, outcome: &TrainOutcome) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let path = |name: &str| dir.join(name);
    outcome.checkpoint.save(path(CHECKPOINT_FILE))?;
    write_csv(&path(HISTORY_CSV), &outcome.history)?;
    write_json(&path(HISTORY_JSON), &outcome.history)?;
    let series = [
        ("dev F1", outcome.history.iter().map(|h| (h.epoch as f64, h.dev_f1)).collect::<Vec<_>>()),
        ("dev F1 (early stop)", outcome.history.iter().map(|h| (h.epoch as f64, h.dev_f1_early)).collect()),
    ]
    .into_iter()
    .map(|(name, points)| Series {
        name: name.into(),
        points,
    })
    .collect::<Vec<_>>();
    write_text(&path(HISTORY_SVG), &line_chart("Training", "epoch", "F1", &series, false))?;
    write_text(&path(CONFIG_TOML), &cfg.to_toml_string()?)?;
    Ok([CHECKPOINT_FILE, HISTORY_CSV, HISTORY_JSON, HISTORY_SVG, CONFIG_TOML]
        .iter()
        .map(|n| path(n))
        .collect())
}

/// One line of a cross-run comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub run: String,
    pub mode: String,
    pub slice_size: usize,
    pub early_stopping: bool,
    pub count: usize,
    pub f1_full: f64,
    pub f1_early: f64,
    pub em_full: f64,
    pub mean_read_ratio: f64,
    pub saving: f64,
    /// Empty when undefined.
    pub efficiency: Option<f64>,
}

pub fn comparison_row(run: &str, s: &EvalSummary) -> ComparisonRow {
    ComparisonRow {
        run: run.to_string(),
        mode: s.mode.name().to_string(),
        slice_size: s.slice_size,
        early_stopping: s.early_stopping,
        count: s.count,
        f1_full: s.f1,
        f1_early: s.f1_early,
        em_full: s.em,
        mean_read_ratio: s.consumption.mean_read_ratio,
        saving: s.consumption.saving,
        efficiency: s.consumption.efficiency,
    }
}

pub fn read_summary(path: &Path) -> Result<EvalSummary> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

/// Locates `summary.json` given either the file itself or its directory.
pub fn summary_path(input: &Path) -> PathBuf {
    if input.is_dir() {
        input.join(SUMMARY_JSON)
    } else {
        input.to_path_buf()
    }
}

/// Collects eval summaries from several runs into one table and bar chart
/// of full-read and early-stop F1.
pub fn write_comparison(dir: &Path, inputs: &[PathBuf]) -> Result<Vec<ComparisonRow>> {
    if inputs.is_empty() {
        return Err(Error::invalid("report", "no runs given"));
    }
    let mut rows = Vec::with_capacity(inputs.len());
    for input in inputs {
        let path = summary_path(input);
        let name = if input.is_dir() {
            input.file_name().unwrap_or(input.as_os_str())
        } else {
            input.parent().and_then(Path::file_name).unwrap_or(input.as_os_str())
        };
        rows.push(comparison_row(&name.to_string_lossy(), &read_summary(&path)?));
    }
    ensure_dir(dir)?;
    write_csv(&dir.join(COMPARISON_CSV), &rows)?;
    let categories: Vec<String> = rows.iter().map(|r| r.run.clone()).collect();
    let series = vec![
        ("full read".to_string(), rows.iter().map(|r| r.f1_full).collect()),
        ("early stop".to_string(), rows.iter().map(|r| r.f1_early).collect()),
    ];
    write_text(
        &dir.join(COMPARISON_SVG),
        &bar_chart("Text F1 by run", "run", "F1", &categories, &series),
    )?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, len: usize, consumed: usize, f1: f64) -> EvalRow {
        EvalRow {
            id: id.into(),
            context_len: len,
            answer_end: 1,
            prediction: "v1".into(),
            f1,
            em: f1,
            prediction_early: "v1".into(),
            f1_early: f1,
            em_early: f1,
            consumed,
            best_len: consumed,
            best_f1: f1,
            extra_ratio: 0.0,
            best_ratio: 1.0,
            read_ratio: consumed as f64 / len as f64,
        }
    }

    #[test]
    fn footer_means_and_totals() {
        let rows = vec![row("a", 10, 4, 1.0), row("b", 20, 20, 0.0)];
        let [mean, total] = footer_rows(&rows);
        assert_eq!(mean.id, "mean");
        assert_eq!(mean.context_len, 15);
        assert_eq!(mean.consumed, 12);
        assert_eq!(mean.f1, 0.5);
        assert_eq!(mean.read_ratio, 0.7);
        assert_eq!(total.context_len, 30);
        assert_eq!(total.consumed, 24);
        assert_eq!(total.em, 1.0);
    }

    #[test]
    fn footer_of_empty_table_is_zero() {
        let [mean, total] = footer_rows(&[]);
        assert_eq!(mean.f1, 0.0);
        assert_eq!(total.consumed, 0);
    }
}
