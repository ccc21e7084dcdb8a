use rand_chacha::ChaCha8Rng;

use super::Directionality;
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// One direction of a gated recurrent layer.
///
/// Gates are laid out `[update | reset | candidate]` along the columns of
/// `wx` and `wh`:
///
/// ```text
/// z = σ(x·Wz + b_z + h·Uz)
/// r = σ(x·Wr + b_r + h·Ur)
/// n = tanh(x·Wn + b_n + r ∘ (h·Un))
/// h' = n + z ∘ (h − n)
/// ```
#[derive(Debug, Clone)]
pub struct GruDirection {
    pub wx: ParamId,
    pub wh: ParamId,
    pub bias: ParamId,
    /// Learned initial state, used when the caller supplies none.
    pub h0: ParamId,
    hidden: usize,
}

impl GruDirection {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(GruDirection {
            wx: store.add_glorot(&format!("{name}.wx"), input_dim, 3 * hidden, rng)?,
            wh: store.add_glorot(&format!("{name}.wh"), hidden, 3 * hidden, rng)?,
            bias: store.add_zeros(&format!("{name}.b"), &[1, 3 * hidden])?,
            h0: store.add_zeros(&format!("{name}.h0"), &[1, hidden])?,
            hidden,
        })
    }

    /// Runs over the rows of `inputs` (reversed when `reverse`), returning the
    /// states in input order and the last state produced.
    fn run<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        inputs: Var,
        init: Var,
        reverse: bool,
    ) -> Result<(Vec<Var>, Var)> {
        let len = tape.shape(inputs)[0];
        let h = self.hidden;
        if len == 0 {
            return Ok((Vec::new(), init));
        }
        let wx = tape.param(store, self.wx);
        let wh = tape.param(store, self.wh);
        let bias = tape.param(store, self.bias);
        let xp = tape.matmul(inputs, wx)?;
        let xp = tape.add(xp, bias)?;
        let xz = tape.cols(xp, 0, h)?;
        let xr = tape.cols(xp, h, 2 * h)?;
        let xn = tape.cols(xp, 2 * h, 3 * h)?;

        let mut state = init;
        let mut states = vec![init; len];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..len).rev())
        } else {
            Box::new(0..len)
        };
        for t in order {
            let hp = tape.matmul(state, wh)?;
            let hz = tape.cols(hp, 0, h)?;
            let hr = tape.cols(hp, h, 2 * h)?;
            let hn = tape.cols(hp, 2 * h, 3 * h)?;
            let xz_t = tape.rows(xz, t, t + 1)?;
            let xr_t = tape.rows(xr, t, t + 1)?;
            let xn_t = tape.rows(xn, t, t + 1)?;
            let z = tape.add(xz_t, hz)?;
            let z = tape.sigmoid(z);
            let r = tape.add(xr_t, hr)?;
            let r = tape.sigmoid(r);
            let rn = tape.mul(r, hn)?;
            let n = tape.add(xn_t, rn)?;
            let n = tape.tanh(n);
            let diff = tape.sub(state, n)?;
            let gated = tape.mul(z, diff)?;
            state = tape.add(n, gated)?;
            states[t] = state;
        }
        Ok((states, state))
    }
}

/// Output of a recurrent layer over one window.
#[derive(Debug, Clone)]
pub struct RecurrentOutput {
    /// `L × (directions · hidden)`, forward states first.
    pub states: Var,
    /// Final state per direction, `1 × hidden` each; the backward direction's
    /// final state is the one produced at position 0.
    pub finals: Vec<Var>,
}

/// Gated recurrent layer, one or two directions.
#[derive(Debug, Clone)]
pub struct Gru {
    pub directions: Vec<GruDirection>,
    hidden: usize,
}

impl Gru {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        input_dim: usize,
        hidden: usize,
        directionality: Directionality,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut directions = vec![GruDirection::new(store, &format!("{name}.fw"), input_dim, hidden, rng)?];
        if directionality == Directionality::Bidirectional {
            directions.push(GruDirection::new(store, &format!("{name}.bw"), input_dim, hidden, rng)?);
        }
        Ok(Gru { directions, hidden })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn num_directions(&self) -> usize {
        self.directions.len()
    }

    pub fn output_dim(&self) -> usize {
        self.hidden * self.directions.len()
    }

    /// Learned default initial states, one per direction.
    pub fn default_init<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>) -> Vec<Var> {
        self.directions.iter().map(|d| tape.param(store, d.h0)).collect()
    }

    /// `init` overrides the learned default states; it must hold one
    /// `1 × hidden` tensor per direction.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        inputs: Var,
        init: Option<&[Var]>,
    ) -> Result<RecurrentOutput> {
        let init = match init {
            Some(states) => {
                if states.len() != self.directions.len() {
                    return Err(Error::shape("gru init", &[self.directions.len()], &[states.len()]));
                }
                for &s in states {
                    if tape.shape(s) != [1, self.hidden] {
                        return Err(Error::shape("gru init", &[1, self.hidden], tape.shape(s)));
                    }
                }
                states.to_vec()
            }
            None => self.default_init(tape, store),
        };
        let len = tape.shape(inputs)[0];
        if len == 0 {
            let states = tape.constant(Tensor::zeros(&[0, self.output_dim()]));
            return Ok(RecurrentOutput { states, finals: init });
        }
        let mut columns = Vec::with_capacity(self.directions.len());
        let mut finals = Vec::with_capacity(self.directions.len());
        for (k, dir) in self.directions.iter().enumerate() {
            let (states, last) = dir.run(tape, store, inputs, init[k], k == 1)?;
            columns.push(tape.concat(&states, 0)?);
            finals.push(last);
        }
        let states = if columns.len() == 1 {
            columns[0]
        } else {
            tape.concat(&columns, 1)?
        };
        Ok(RecurrentOutput { states, finals })
    }
}
