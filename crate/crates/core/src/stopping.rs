//! Stop head, distance-scaled stop loss, and cumulative-threshold stopping.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopConfig {
    /// Distance (tokens) below which the loss scale stays at `ln(dist_threshold)`.
    pub dist_threshold: usize,
    pub stop_threshold: f64,
    pub head_hidden_dim: usize,
}

impl Default for StopConfig {
    fn default() -> Self {
        StopConfig {
            dist_threshold: 16,
            stop_threshold: 0.5,
            head_hidden_dim: 16,
        }
    }
}

impl StopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dist_threshold < 2 {
            return Err(Error::Config(format!("dist_threshold {} < 2", self.dist_threshold)));
        }
        if self.stop_threshold.is_nan() || self.stop_threshold <= 0.0 {
            return Err(Error::Config(format!("stop_threshold {} must be positive", self.stop_threshold)));
        }
        if self.head_hidden_dim == 0 {
            return Err(Error::Config("head_hidden_dim must be positive".into()));
        }
        Ok(())
    }
}

/// `sigmoid(W2·relu(W1·mean(reprs) + b1) + b2)`.
#[derive(Debug, Clone)]
pub struct StopHead {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl StopHead {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(StopHead {
            w1: store.add_glorot(&format!("{name}.w1"), input_dim, hidden, rng)?,
            b1: store.add_zeros(&format!("{name}.b1"), &[1, hidden])?,
            w2: store.add_glorot(&format!("{name}.w2"), hidden, 1, rng)?,
            b2: store.add_zeros(&format!("{name}.b2"), &[1, 1])?,
        })
    }

    /// Stop probability for one slice as a `1 × 1` node.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, reprs: Var) -> Result<Var> {
        if tape.shape(reprs)[0] == 0 {
            return Err(Error::invalid("stop_probability", "empty slice"));
        }
        let pooled = tape.mean_axis(reprs, 0)?;
        let w1 = tape.param(store, self.w1);
        let b1 = tape.param(store, self.b1);
        let w2 = tape.param(store, self.w2);
        let b2 = tape.param(store, self.b2);
        let h = tape.matmul(pooled, w1)?;
        let h = tape.add(h, b1)?;
        let h = tape.relu(h);
        let o = tape.matmul(h, w2)?;
        let o = tape.add(o, b2)?;
        Ok(tape.sigmoid(o))
    }
}

/// `label_i = 1` iff the answer ends inside the first `lengths_read[i]` tokens.
pub fn gold_stop_labels(answer_end: usize, lengths_read: &[usize]) -> Result<Vec<bool>> {
    let total = lengths_read.last().copied().unwrap_or(0);
    if answer_end >= total {
        return Err(Error::invalid(
            "gold_stop_labels",
            format!("answer_end {answer_end} outside context of {total} tokens"),
        ));
    }
    Ok(lengths_read.iter().map(|&l| answer_end < l).collect())
}

/// `ln(max(dist_threshold, |length_read − answer_end|))`.
pub fn extra_length(length_read: usize, answer_end: usize, dist_threshold: usize) -> f64 {
    (length_read.abs_diff(answer_end).max(dist_threshold) as f64).ln()
}

/// Per-slice terms of the stop loss for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct StopSupervision {
    pub predicted: Vec<f64>,
    pub labels: Vec<bool>,
    pub extra_length: Vec<f64>,
    pub lengths_read: Vec<usize>,
    pub answer_end: usize,
}

impl StopSupervision {
    pub fn new(predicted: Vec<f64>, lengths_read: Vec<usize>, answer_end: usize, dist_threshold: usize) -> Result<Self> {
        if predicted.len() != lengths_read.len() {
            return Err(Error::shape("stop supervision", &[lengths_read.len()], &[predicted.len()]));
        }
        if lengths_read.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("stop supervision", "lengths_read must increase"));
        }
        let labels = gold_stop_labels(answer_end, &lengths_read)?;
        let extra_length = lengths_read
            .iter()
            .map(|&l| extra_length(l, answer_end, dist_threshold))
            .collect();
        Ok(StopSupervision {
            predicted,
            labels,
            extra_length,
            lengths_read,
            answer_end,
        })
    }
}

fn label_value(l: bool) -> f64 {
    if l {
        1.0
    } else {
        0.0
    }
}

/// `Σ_i (p_i − y_i)² · extra_length_i`.
pub fn stop_loss(sup: &StopSupervision) -> Result<f64> {
    let n = sup.predicted.len();
    if sup.labels.len() != n || sup.extra_length.len() != n {
        return Err(Error::shape(
            "stop_loss",
            &[n],
            &[sup.labels.len(), sup.extra_length.len()],
        ));
    }
    Ok(sup
        .predicted
        .iter()
        .zip(&sup.labels)
        .zip(&sup.extra_length)
        .map(|((&p, &y), &w)| (p - label_value(y)).powi(2) * w)
        .sum())
}

/// Differentiable stop loss over `1 × 1` probability nodes.
pub fn stop_loss_node<T: Scalar>(
    tape: &mut Tape<T>,
    probs: &[Var],
    labels: &[bool],
    extra_length: &[f64],
) -> Result<Var> {
    let n = probs.len();
    if labels.len() != n || extra_length.len() != n || n == 0 {
        return Err(Error::shape("stop_loss", &[n], &[labels.len(), extra_length.len()]));
    }
    let p = tape.concat(probs, 1)?;
    let y = tape.constant(Tensor::from_f64(&[1, n], &labels.iter().map(|&l| label_value(l)).collect::<Vec<_>>())?);
    let w = tape.constant(Tensor::from_f64(&[1, n], extra_length)?);
    let d = tape.sub(p, y)?;
    let d = tape.square(d);
    let d = tape.mul(d, w)?;
    Ok(tape.sum(d))
}

/// Adds the answer loss only when the answer is visible at the chosen stop;
/// otherwise the answer loss is left off the graph and receives no gradient.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    answer_loss: Option<Var>,
    stop_loss: Var,
    answer_visible: bool,
) -> Result<Var> {
    match answer_loss {
        Some(a) if answer_visible => tape.add(a, stop_loss),
        _ => Ok(stop_loss),
    }
}

/// `−ln Σ_{s ∈ starts} p_start(s) − ln Σ_{e ∈ ends} p_end(e)` over the gold
/// spans lying inside the `1 × L` logit rows; `None` when no span does.
pub fn answer_loss<T: Scalar>(
    tape: &mut Tape<T>,
    start: Var,
    end: Var,
    gold_spans: &[(usize, usize)],
) -> Result<Option<Var>> {
    let len = tape.shape(start)[1];
    if tape.shape(end) != [1, len] {
        return Err(Error::shape("answer_loss", &[1, len], tape.shape(end)));
    }
    let mut starts = vec![0.0; len];
    let mut ends = vec![0.0; len];
    let mut any = false;
    for &(s, e) in gold_spans {
        if e < len {
            starts[s] = 1.0;
            ends[e] = 1.0;
            any = true;
        }
    }
    if !any {
        return Ok(None);
    }
    let mut total = None;
    for (logits, pick) in [(start, starts), (end, ends)] {
        let gold = log_sum_exp(tape, logits, Some(&pick))?;
        let all = log_sum_exp(tape, logits, None)?;
        let nll = tape.sub(all, gold)?;
        total = Some(match total {
            None => nll,
            Some(t) => tape.add(t, nll)?,
        });
    }
    Ok(total)
}

/// `ln Σ_j exp(x_j)` over a `1 × L` row, restricted to positions where
/// `pick` is 1 when given. The shift by the (constant) largest included
/// logit keeps every term finite.
fn log_sum_exp<T: Scalar>(tape: &mut Tape<T>, x: Var, pick: Option<&[f64]>) -> Result<Var> {
    let len = tape.shape(x)[1];
    let vals = tape.value(x).data();
    let included = |j: usize| pick.is_none_or(|p| p[j] != 0.0);
    let shift = (0..len)
        .filter(|&j| included(j))
        .map(|j| vals[j])
        .fold(T::neg_infinity(), T::max);
    let c = tape.constant(Tensor::scalar(shift));
    let shifted = tape.sub(x, c)?;
    let e = tape.exp(shifted);
    let s = match pick {
        Some(p) => {
            let col = tape.constant(Tensor::from_f64(&[len, 1], p)?);
            tape.matmul(e, col)?
        }
        None => tape.sum(e),
    };
    let l = tape.log(s);
    tape.add(l, c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StopDecision {
    pub probs: Vec<f64>,
    pub cumulative: Vec<f64>,
    /// 0-based index of the last slice read.
    pub stop_index: usize,
    /// Tokens consumed, `L_e`.
    pub consumed: usize,
}

/// Stops at the first slice whose cumulative probability reaches the
/// threshold, or reads everything.
pub fn infer_stop(probs: &[f64], stop_threshold: f64, lengths_read: &[usize]) -> Result<StopDecision> {
    if probs.is_empty() || probs.len() != lengths_read.len() {
        return Err(Error::shape("infer_stop", &[lengths_read.len()], &[probs.len()]));
    }
    let mut cumulative = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for &p in probs {
        acc += p;
        cumulative.push(acc);
    }
    let stop_index = cumulative
        .iter()
        .position(|&c| c >= stop_threshold)
        .unwrap_or(probs.len() - 1);
    Ok(StopDecision {
        probs: probs.to_vec(),
        cumulative,
        stop_index,
        consumed: lengths_read[stop_index],
    })
}
