use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::layers::{EncodedWindow, LayerConfig};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Var};

/// `relu(x·W1 + b1)·W2 + b2`, predicting one initial state. The prediction
/// is clamped to `[-1, 1]`, the range a recurrent state can take.
#[derive(Debug, Clone)]
pub struct TransferNet {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl TransferNet {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        input_dim: usize,
        hidden: usize,
        output_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(TransferNet {
            w1: store.add_glorot(&format!("{name}.w1"), input_dim, hidden, rng)?,
            b1: store.add_zeros(&format!("{name}.b1"), &[1, hidden])?,
            w2: store.add_glorot(&format!("{name}.w2"), hidden, output_dim, rng)?,
            b2: store.add_zeros(&format!("{name}.b2"), &[1, output_dim])?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w1 = tape.param(store, self.w1);
        let b1 = tape.param(store, self.b1);
        let w2 = tape.param(store, self.w2);
        let b2 = tape.param(store, self.b2);
        let h = tape.matmul(x, w1)?;
        let h = tape.add(h, b1)?;
        let h = tape.relu(h);
        let o = tape.matmul(h, w2)?;
        let o = tape.add(o, b2)?;
        Ok(tape.clamp(o, -1.0, 1.0))
    }
}

/// Predicted initial states for the next slice, one `1 × hidden` node per
/// direction of each receiving layer.
#[derive(Debug, Clone)]
pub struct TransferState {
    pub contextual: Vec<Var>,
    pub modeling: Vec<Var>,
}

/// Transfer networks for the contextual layer (fed by the mean attention
/// output) and the modeling layer (fed by the mean modeling output).
#[derive(Debug, Clone)]
pub struct StepTransfer {
    pub contextual: Vec<TransferNet>,
    pub modeling: Vec<TransferNet>,
}

impl StepTransfer {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, cfg: &LayerConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let repr = cfg.repr_dim();
        let h = cfg.hidden_dim;
        let dirs = ["fw", "bw"];
        let n = cfg.directionality.num_directions();
        let mut contextual = Vec::with_capacity(n);
        let mut modeling = Vec::with_capacity(n);
        for d in &dirs[..n] {
            contextual.push(TransferNet::new(store, &format!("transfer.contextual.{d}"), 4 * repr, h, h, rng)?);
            modeling.push(TransferNet::new(store, &format!("transfer.modeling.{d}"), repr, h, h, rng)?);
        }
        Ok(StepTransfer { contextual, modeling })
    }

    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        window: &EncodedWindow,
    ) -> Result<TransferState> {
        let att = tape.mean_axis(window.attention_output, 0)?;
        let model = tape.mean_axis(window.modeling_output, 0)?;
        let contextual = self
            .contextual
            .iter()
            .map(|net| net.forward(tape, store, att))
            .collect::<Result<_>>()?;
        let modeling = self
            .modeling
            .iter()
            .map(|net| net.forward(tape, store, model))
            .collect::<Result<_>>()?;
        Ok(TransferState { contextual, modeling })
    }
}
