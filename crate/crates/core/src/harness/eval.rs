use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::data::QAExample;
use crate::error::Result;
use crate::layers::SpanLogits;
use crate::metrics::{
    consumption_report, exact_match, greediness_metrics, oracle_best_stop, text_f1, ConsumptionRecord,
    ConsumptionSummary,
};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::slicing::{decode_span, QaModel, SliceMode, SliceRun, SliceSpec};
use crate::stopping::infer_stop;
use crate::tensor::Tape;

/// Per-example evaluation record (one CSV row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub context_len: usize,
    pub answer_end: usize,
    pub prediction: String,
    pub f1: f64,
    pub em: f64,
    pub prediction_early: String,
    pub f1_early: f64,
    pub em_early: f64,
    /// `L_e`; equals `context_len` when early stopping is off.
    pub consumed: usize,
    /// `L_max`; equals `context_len` when the oracle is not run.
    pub best_len: usize,
    pub best_f1: f64,
    /// `(L_max − answer_end) / L_c`.
    pub extra_ratio: f64,
    /// `L_max / L_c`.
    pub best_ratio: f64,
    /// `L_e / L_c`.
    pub read_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mode: SliceMode,
    pub slice_size: usize,
    pub early_stopping: bool,
    pub count: usize,
    /// `F_c`.
    pub f1: f64,
    pub em: f64,
    /// `F_e`.
    pub f1_early: f64,
    pub em_early: f64,
    pub mean_extra_ratio: f64,
    /// Examples whose best prefix ends before the answer.
    pub negative_extra: usize,
    pub consumption: ConsumptionSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub summary: EvalSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    /// Score every slice prefix to find `L_max`.
    pub oracle: bool,
}

fn to_f64<T: Scalar>(tape: &Tape<T>, logits: &SpanLogits) -> (Vec<f64>, Vec<f64>) {
    (
        tape.value(logits.start).to_f64_vec(),
        tape.value(logits.end).to_f64_vec(),
    )
}

fn predict(ex: &QAExample, start: &[f64], end: &[f64], max_len: usize) -> String {
    decode_span(start, end, max_len)
        .map(|(s, e)| ex.span_text(s, e))
        .unwrap_or_default()
}

pub fn evaluate_example<T: Scalar>(
    model: &QaModel,
    store: &ParamStore<T>,
    ex: &QAExample,
    cfg: &RunConfig,
    opts: EvalOptions,
) -> Result<EvalRow> {
    let spec = SliceSpec::new(ex.context_len(), cfg.slicing.slice_size, cfg.slicing.mode)?;
    let max_len = cfg.train.max_answer_len;
    let mut tape = Tape::new();
    let run: SliceRun = model.run(&mut tape, store, ex, &spec, spec.num_slices())?;
    let full = SpanLogits {
        start: run.start,
        end: run.end,
    };
    let (s, e) = to_f64(&tape, &full);
    let prediction = predict(ex, &s, &e, max_len);
    let f1 = text_f1(&prediction, &ex.answers);
    let em = exact_match(&prediction, &ex.answers);

    let mut prefix_cache: Vec<Option<(String, f64)>> = vec![None; spec.num_slices()];
    prefix_cache[spec.num_slices() - 1] = Some((prediction.clone(), f1));
    let mut at_prefix = |tape: &mut Tape<T>, k: usize| -> Result<(String, f64)> {
        if let Some(hit) = &prefix_cache[k - 1] {
            return Ok(hit.clone());
        }
        let logits = model.prefix_logits(tape, store, &run, k)?;
        let (s, e) = to_f64(tape, &logits);
        let p = predict(ex, &s, &e, max_len);
        let f = text_f1(&p, &ex.answers);
        prefix_cache[k - 1] = Some((p.clone(), f));
        Ok((p, f))
    };

    let (consumed, prediction_early, f1_early) = if cfg.train.early_stopping {
        let probs: Vec<f64> = run.stop_probs.iter().map(|&p| tape.scalar_value(p).as_f64()).collect();
        let d = infer_stop(&probs, cfg.stop.stop_threshold, &run.lengths_read)?;
        let (p, f) = at_prefix(&mut tape, d.stop_index + 1)?;
        (d.consumed, p, f)
    } else {
        (ex.context_len(), prediction.clone(), f1)
    };
    let em_early = exact_match(&prediction_early, &ex.answers);

    let (best_len, best_f1) = if opts.oracle {
        let lengths = run.lengths_read.clone();
        let o = oracle_best_stop(ex.context_len(), cfg.slicing.slice_size, |len| {
            let k = lengths.iter().position(|&l| l == len).expect("stride equals slice size") + 1;
            at_prefix(&mut tape, k).map(|(_, f)| f)
        })?;
        (o.l_max, o.best_f1)
    } else {
        (ex.context_len(), f1)
    };
    let (extra_ratio, best_ratio) = greediness_metrics(best_len, ex.answer_end(), ex.context_len());
    Ok(EvalRow {
        id: ex.id.clone(),
        context_len: ex.context_len(),
        answer_end: ex.answer_end(),
        prediction,
        f1,
        em,
        prediction_early,
        f1_early,
        em_early,
        consumed,
        best_len,
        best_f1,
        extra_ratio,
        best_ratio,
        read_ratio: consumed as f64 / ex.context_len() as f64,
    })
}

pub fn evaluate<T: Scalar>(
    model: &QaModel,
    store: &ParamStore<T>,
    examples: &[QAExample],
    cfg: &RunConfig,
    opts: EvalOptions,
) -> Result<EvalReport> {
    let rows = examples
        .iter()
        .map(|ex| evaluate_example(model, store, ex, cfg, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(rows, cfg))
}

pub fn summarize(rows: Vec<EvalRow>, cfg: &RunConfig) -> EvalReport {
    let n = rows.len().max(1) as f64;
    let mean = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let records: Vec<ConsumptionRecord> = rows
        .iter()
        .map(|r| ConsumptionRecord {
            context_len: r.context_len,
            consumed: r.consumed,
            best_len: r.best_len,
            answer_end: r.answer_end,
            f1_early: r.f1_early,
            f1_full: r.f1,
        })
        .collect();
    let summary = EvalSummary {
        mode: cfg.slicing.mode,
        slice_size: cfg.slicing.slice_size,
        early_stopping: cfg.train.early_stopping,
        count: rows.len(),
        f1: mean(|r| r.f1),
        em: mean(|r| r.em),
        f1_early: mean(|r| r.f1_early),
        em_early: mean(|r| r.em_early),
        mean_extra_ratio: mean(|r| r.extra_ratio),
        negative_extra: rows.iter().filter(|r| r.extra_ratio < 0.0).count(),
        consumption: consumption_report(&records, cfg.slicing.slice_size),
    };
    EvalReport { rows, summary }
}
