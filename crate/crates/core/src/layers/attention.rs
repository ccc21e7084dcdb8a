use rand_chacha::ChaCha8Rng;

use super::Directionality;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Mask, Tape, Tensor, Var};

/// Trilinear similarity weights: `S[i][j] = wa·a_i + wb·b_j + wab·(a_i ∘ b_j)`.
#[derive(Debug, Clone)]
struct Trilinear {
    wa: ParamId,
    wb: ParamId,
    wab: ParamId,
}

impl Trilinear {
    fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let bound = (1.0 / dim as f64).sqrt();
        Ok(Trilinear {
            wa: store.add_uniform(&format!("{name}.wa"), &[dim, 1], bound, rng)?,
            wb: store.add_uniform(&format!("{name}.wb"), &[dim, 1], bound, rng)?,
            wab: store.add_uniform(&format!("{name}.wab"), &[1, dim], bound, rng)?,
        })
    }

    fn scores<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, a: Var, b: Var) -> Result<Var> {
        let wa = tape.param(store, self.wa);
        let wb = tape.param(store, self.wb);
        let wab = tape.param(store, self.wab);
        let sa = tape.matmul(a, wa)?;
        let sb = tape.matmul(b, wb)?;
        let sb = tape.transpose(sb)?;
        let aw = tape.mul(a, wab)?;
        let bt = tape.transpose(b)?;
        let cross = tape.matmul(aw, bt)?;
        let s = tape.add(cross, sb)?;
        tape.add(s, sa)
    }
}

fn ones_col<T: Scalar>(tape: &mut Tape<T>, rows: usize) -> Var {
    tape.constant(Tensor::full(&[rows, 1], T::one()))
}

/// Context–question attention flow.
#[derive(Debug, Clone)]
pub struct BiAttention {
    sim: Trilinear,
}

/// Output of [`BiAttention::forward`], with the attention maps kept for inspection.
#[derive(Debug, Clone)]
pub struct BiAttentionOutput {
    /// `Lc × 4d`: `[c ; a ; c∘a ; c∘b]`.
    pub output: Var,
    /// Context-to-question weights, `Lc × Lq`.
    pub c2q: Option<Var>,
    /// Question-to-context weights over context positions; `1 × Lc`, or
    /// `Lc × Lc` (causal) in past-only mode.
    pub q2c: Option<Var>,
}

impl BiAttention {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(BiAttention {
            sim: Trilinear::new(store, name, dim, rng)?,
        })
    }

    /// When `enabled` is false the layer passes `[c ; c ; c ; c]` through.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        context: Var,
        question: Var,
        directionality: Directionality,
        enabled: bool,
    ) -> Result<BiAttentionOutput> {
        let (cs, qs) = (tape.shape(context).to_vec(), tape.shape(question).to_vec());
        if qs[0] == 0 {
            return Err(Error::invalid("bidaf_attention", "question has no tokens"));
        }
        if cs[1] != qs[1] {
            return Err(Error::shape("bidaf_attention", &cs, &qs));
        }
        if !enabled {
            let output = tape.concat(&[context, context, context, context], 1)?;
            return Ok(BiAttentionOutput {
                output,
                c2q: None,
                q2c: None,
            });
        }
        let lc = cs[0];
        let s = self.sim.scores(tape, store, context, question)?;
        let c2q = tape.masked_softmax(s, &Mask::all(qs[0]))?;
        let attended = tape.matmul(c2q, question)?;

        let best = tape.max_cols(s)?;
        let (q2c, summary) = match directionality {
            Directionality::Bidirectional => {
                let row = tape.transpose(best)?;
                let w = tape.masked_softmax(row, &Mask::all(lc))?;
                let b = tape.matmul(w, context)?;
                (w, b)
            }
            Directionality::UnidirectionalPastOnly => {
                // row i attends over context positions 0..=i only
                let row = tape.transpose(best)?;
                let ones = ones_col(tape, lc);
                let grid = tape.matmul(ones, row)?;
                let mask = (0..lc * lc).map(|k| k % lc <= k / lc).collect();
                let w = tape.masked_softmax(grid, &Mask::PerRow(mask))?;
                let b = tape.matmul(w, context)?;
                (w, b)
            }
        };
        let ca = tape.mul(context, attended)?;
        let cb = tape.mul(context, summary)?;
        let output = tape.concat(&[context, attended, ca, cb], 1)?;
        Ok(BiAttentionOutput {
            output,
            c2q: Some(c2q),
            q2c: Some(q2c),
        })
    }
}

/// Context self-attention with the diagonal masked, followed by a projection
/// of `[m ; attended]` back to the input width, added residually.
///
/// Rows whose attention support is empty (a single-token window, or the
/// first position in past-only mode) pass through unchanged.
#[derive(Debug, Clone)]
pub struct SelfAttention {
    sim: Trilinear,
    proj_w: ParamId,
    proj_b: ParamId,
}

#[derive(Debug, Clone)]
pub struct SelfAttentionOutput {
    pub output: Var,
    /// `L × L` attention weights, absent when the layer is bypassed.
    pub weights: Option<Var>,
}

impl SelfAttention {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(SelfAttention {
            sim: Trilinear::new(store, &format!("{name}.sim"), dim, rng)?,
            proj_w: store.add_glorot(&format!("{name}.proj_w"), 2 * dim, dim, rng)?,
            proj_b: store.add_zeros(&format!("{name}.proj_b"), &[1, dim])?,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        m: Var,
        directionality: Directionality,
        enabled: bool,
    ) -> Result<SelfAttentionOutput> {
        let len = tape.shape(m)[0];
        if len == 0 {
            return Err(Error::invalid("self_attention", "empty window"));
        }
        if !enabled || len == 1 {
            return Ok(SelfAttentionOutput { output: m, weights: None });
        }
        let causal = directionality == Directionality::UnidirectionalPastOnly;
        let allowed = |i: usize, j: usize| j != i && (!causal || j < i);
        let mut mask = Vec::with_capacity(len * len);
        let mut keep = Vec::with_capacity(len);
        for i in 0..len {
            let supported = (0..len).any(|j| allowed(i, j));
            keep.push(if supported { T::one() } else { T::zero() });
            // unsupported rows attend to themselves; their output is discarded below
            mask.extend((0..len).map(|j| allowed(i, j) || (!supported && j == i)));
        }
        let s = self.sim.scores(tape, store, m, m)?;
        let weights = tape.masked_softmax(s, &Mask::PerRow(mask))?;
        let attended = tape.matmul(weights, m)?;
        let cat = tape.concat(&[m, attended], 1)?;
        let w = tape.param(store, self.proj_w);
        let b = tape.param(store, self.proj_b);
        let proj = tape.matmul(cat, w)?;
        let proj = tape.add(proj, b)?;
        let proj = tape.relu(proj);
        let keep = tape.constant(Tensor::new(vec![len, 1], keep)?);
        let gated = tape.mul(proj, keep)?;
        let output = tape.add(m, gated)?;
        Ok(SelfAttentionOutput {
            output,
            weights: Some(weights),
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn store_with<F: FnOnce(&mut ParamStore<f64>, &mut ChaCha8Rng) -> R, R>(f: F) -> (ParamStore<f64>, R) {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let r = f(&mut store, &mut rng);
        (store, r)
    }

    fn set(store: &mut ParamStore<f64>, name: &str, values: &[f64]) {
        store.by_name_mut(name).unwrap().data_mut().copy_from_slice(values);
    }

    fn softmax(xs: &[f64]) -> Vec<f64> {
        let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|x| x / s).collect()
    }

    #[test]
    fn single_question_token_is_copied_to_every_row() {
        let (store, att) = store_with(|s, r| BiAttention::new(s, "att", 2, r).unwrap());
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::matrix(&[&[1.0, 2.0], &[-1.0, 0.5], &[0.0, 3.0]]).unwrap());
        let q = tape.constant(Tensor::matrix(&[&[0.7, -0.2]]).unwrap());
        let out = att
            .forward(&mut tape, &store, c, q, Directionality::Bidirectional, true)
            .unwrap();
        let o = tape.value(out.output);
        for i in 0..3 {
            assert_eq!(o.at(&[i, 2]).unwrap(), 0.7);
            assert_eq!(o.at(&[i, 3]).unwrap(), -0.2);
        }
    }

    #[test]
    fn identical_question_rows_give_uniform_attention() {
        let (store, att) = store_with(|s, r| BiAttention::new(s, "att", 2, r).unwrap());
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::matrix(&[&[1.0, 2.0], &[-1.0, 0.5]]).unwrap());
        let q = tape.constant(Tensor::matrix(&[&[0.3, 0.4], &[0.3, 0.4], &[0.3, 0.4]]).unwrap());
        let out = att
            .forward(&mut tape, &store, c, q, Directionality::Bidirectional, true)
            .unwrap();
        for &w in tape.value(out.c2q.unwrap()).data() {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
        let o = tape.value(out.output);
        assert_eq!(o.at(&[0, 2]).unwrap(), o.at(&[1, 2]).unwrap());
    }

    /// 2×2 case with hand-set weights, every intermediate recomputed by hand.
    #[test]
    fn hand_computed_two_by_two() {
        let (mut store, att) = store_with(|s, r| BiAttention::new(s, "att", 2, r).unwrap());
        set(&mut store, "att.wa", &[1.0, 0.0]);
        set(&mut store, "att.wb", &[0.0, 1.0]);
        set(&mut store, "att.wab", &[1.0, 1.0]);
        let c = [[1.0, 0.0], [0.0, 2.0]];
        let q = [[1.0, 1.0], [0.0, -1.0]];
        // S[i][j] = c_i0 + q_j1 + c_i·q_j
        let s: [[f64; 2]; 2] = [[1.0 + 1.0 + 1.0, 1.0 - 1.0 + 0.0], [0.0 + 1.0 + 2.0, 0.0 - 1.0 - 2.0]];
        let mut tape = Tape::new();
        let cv = tape.constant(Tensor::matrix(&[&c[0], &c[1]]).unwrap());
        let qv = tape.constant(Tensor::matrix(&[&q[0], &q[1]]).unwrap());
        let out = att
            .forward(&mut tape, &store, cv, qv, Directionality::Bidirectional, true)
            .unwrap();
        let o = tape.value(out.output).clone();
        let beta = softmax(&[s[0][0].max(s[0][1]), s[1][0].max(s[1][1])]);
        let b = [beta[0] * c[0][0] + beta[1] * c[1][0], beta[0] * c[0][1] + beta[1] * c[1][1]];
        for i in 0..2 {
            let w = softmax(&s[i]);
            let a = [w[0] * q[0][0] + w[1] * q[1][0], w[0] * q[0][1] + w[1] * q[1][1]];
            let expect = [
                c[i][0],
                c[i][1],
                a[0],
                a[1],
                c[i][0] * a[0],
                c[i][1] * a[1],
                c[i][0] * b[0],
                c[i][1] * b[1],
            ];
            for (k, e) in expect.iter().enumerate() {
                assert!((o.at(&[i, k]).unwrap() - e).abs() < 1e-14, "row {i} col {k}");
            }
        }
    }

    #[test]
    fn disabled_passes_context_four_times() {
        let (store, att) = store_with(|s, r| BiAttention::new(s, "att", 2, r).unwrap());
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::matrix(&[&[1.0, 2.0]]).unwrap());
        let q = tape.constant(Tensor::matrix(&[&[0.0, 1.0]]).unwrap());
        let out = att
            .forward(&mut tape, &store, c, q, Directionality::Bidirectional, false)
            .unwrap();
        assert_eq!(tape.value(out.output).data(), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
    }

    #[test]
    fn empty_question_is_error() {
        let (store, att) = store_with(|s, r| BiAttention::new(s, "att", 2, r).unwrap());
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::zeros(&[2, 2]));
        let q = tape.constant(Tensor::zeros(&[0, 2]));
        assert!(att
            .forward(&mut tape, &store, c, q, Directionality::Bidirectional, true)
            .is_err());
    }

    #[test]
    fn self_attention_single_row_is_identity() {
        let (store, sa) = store_with(|s, r| SelfAttention::new(s, "sa", 3, r).unwrap());
        let mut tape = Tape::new();
        let m = tape.constant(Tensor::matrix(&[&[0.1, 0.2, 0.3]]).unwrap());
        for dir in [Directionality::Bidirectional, Directionality::UnidirectionalPastOnly] {
            let out = sa.forward(&mut tape, &store, m, dir, true).unwrap();
            assert_eq!(tape.value(out.output).data(), &[0.1, 0.2, 0.3]);
        }
    }

    #[test]
    fn self_attention_causal_support() {
        let (store, sa) = store_with(|s, r| SelfAttention::new(s, "sa", 2, r).unwrap());
        let mut tape = Tape::new();
        let m = tape.constant(Tensor::matrix(&[&[0.1, 0.2], &[0.5, -0.3], &[1.0, 0.4], &[0.0, 0.9]]).unwrap());
        let out = sa
            .forward(&mut tape, &store, m, Directionality::UnidirectionalPastOnly, true)
            .unwrap();
        let w = tape.value(out.weights.unwrap());
        for j in 0..4 {
            let v = w.at(&[2, j]).unwrap();
            assert_eq!(v > 0.0, j < 2, "j={j} w={v}");
        }
        // first row has no past: passes through
        assert_eq!(&tape.value(out.output).data()[..2], &[0.1, 0.2]);
    }

    #[test]
    fn self_attention_weights_match_hand_softmax() {
        let (mut store, sa) = store_with(|s, r| SelfAttention::new(s, "sa", 2, r).unwrap());
        set(&mut store, "sa.sim.wa", &[0.5, 0.0]);
        set(&mut store, "sa.sim.wb", &[0.0, -1.0]);
        set(&mut store, "sa.sim.wab", &[1.0, 2.0]);
        let m = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let sim = |i: usize, j: usize| {
            0.5 * m[i][0] - m[j][1] + m[i][0] * m[j][0] + 2.0 * m[i][1] * m[j][1]
        };
        let mut tape = Tape::new();
        let mv = tape.constant(Tensor::matrix(&[&m[0], &m[1], &m[2]]).unwrap());
        let out = sa
            .forward(&mut tape, &store, mv, Directionality::Bidirectional, true)
            .unwrap();
        let w = tape.value(out.weights.unwrap()).clone();
        for i in 0..3 {
            let others: Vec<usize> = (0..3).filter(|&j| j != i).collect();
            let p = softmax(&others.iter().map(|&j| sim(i, j)).collect::<Vec<_>>());
            assert_eq!(w.at(&[i, i]).unwrap(), 0.0);
            for (k, &j) in others.iter().enumerate() {
                assert!((w.at(&[i, j]).unwrap() - p[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn attention_layers_pass_grad_check() {
        let (store, (att, sa)) = store_with(|s, r| {
            (
                BiAttention::new(s, "att", 2, r).unwrap(),
                SelfAttention::new(s, "sa", 3, r).unwrap(),
            )
        });
        for dir in [Directionality::Bidirectional, Directionality::UnidirectionalPastOnly] {
            let err = crate::tensor::grad_check(
                |t, p| {
                    let c = t.constant(Tensor::matrix(&[&[1.0, 0.2], &[-0.4, 0.5], &[0.3, -0.9]])?);
                    let q = t.constant(Tensor::matrix(&[&[0.6, -0.1], &[0.2, 0.8]])?);
                    let a = att.forward(t, p, c, q, dir, true)?;
                    let m = t.constant(Tensor::matrix(&[
                        &[0.9, -0.3, 0.4],
                        &[-0.7, 0.6, 0.1],
                        &[0.2, 0.8, -1.0],
                        &[0.5, -0.5, 0.7],
                    ])?);
                    let s = sa.forward(t, p, m, dir, true)?;
                    let a = t.tanh(a.output);
                    let a = t.square(a);
                    let s = t.tanh(s.output);
                    let s = t.square(s);
                    let (a, s) = (t.sum(a), t.sum(s));
                    t.add(a, s)
                },
                &store,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "{dir:?}: {err}");
        }
    }
}
