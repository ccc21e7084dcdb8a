use rand_chacha::ChaCha8Rng;

use super::{Directionality, Gru};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Mask, Tape, Tensor, Var};

/// Start/end scoring over a run of token representations.
///
/// Both recurrent passes run forward only, so a position's logits never
/// depend on later positions except through the start-weighted summary, which
/// is normalised over `support` alone.
///
/// ```text
/// g1    = GRU([r])                         start = [r ; g1]·ws
/// sum   = softmax_support(start)ᵀ · g1
/// g2    = GRU([g1 ; sum])                  end   = [r ; g2]·we
/// ```
///
/// The logit maps carry no bias: a shift shared by every position cancels in
/// the softmax.
#[derive(Debug, Clone)]
pub struct PredictionHead {
    start_rnn: Gru,
    end_rnn: Gru,
    w_start: ParamId,
    w_end: ParamId,
}

/// Start and end logits as `1 × L` rows.
#[derive(Debug, Clone, Copy)]
pub struct SpanLogits {
    pub start: Var,
    pub end: Var,
}

impl PredictionHead {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let fw = Directionality::UnidirectionalPastOnly;
        Ok(PredictionHead {
            start_rnn: Gru::new(store, &format!("{name}.start_rnn"), input_dim, hidden, fw, rng)?,
            end_rnn: Gru::new(store, &format!("{name}.end_rnn"), 2 * hidden, hidden, fw, rng)?,
            w_start: store.add_glorot(&format!("{name}.w_start"), input_dim + hidden, 1, rng)?,
            w_end: store.add_glorot(&format!("{name}.w_end"), input_dim + hidden, 1, rng)?,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        reprs: Var,
        support: &[bool],
    ) -> Result<SpanLogits> {
        let len = tape.shape(reprs)[0];
        if len == 0 {
            return Err(Error::invalid("prediction_head", "empty window"));
        }
        if support.len() != len {
            return Err(Error::shape("prediction_head support", &[len], &[support.len()]));
        }
        let g1 = self.start_rnn.forward(tape, store, reprs, None)?.states;
        let start_in = tape.concat(&[reprs, g1], 1)?;
        let start = self.score(tape, store, start_in, self.w_start)?;

        let p_start = tape.masked_softmax(start, &Mask::Shared(support.to_vec()))?;
        let summary = tape.matmul(p_start, g1)?;
        let ones = tape.constant(Tensor::full(&[len, 1], T::one()));
        let summary = tape.matmul(ones, summary)?;
        let end_rnn_in = tape.concat(&[g1, summary], 1)?;
        let g2 = self.end_rnn.forward(tape, store, end_rnn_in, None)?.states;
        let end_in = tape.concat(&[reprs, g2], 1)?;
        let end = self.score(tape, store, end_in, self.w_end)?;
        Ok(SpanLogits { start, end })
    }

    fn score<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        input: Var,
        w: ParamId,
    ) -> Result<Var> {
        let w = tape.param(store, w);
        let col = tape.matmul(input, w)?;
        tape.transpose(col)
    }
}
