use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Trainable word-embedding table, `vocab_size × embed_dim`.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: ParamId,
    vocab_size: usize,
    dim: usize,
}

impl Embedding {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        vocab_size: usize,
        dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let table = store.add_uniform(&format!("{name}.table"), &[vocab_size, dim], 0.5, rng)?;
        Ok(Embedding { table, vocab_size, dim })
    }

    /// `L × dim`; an empty token list gives a `0 × dim` tensor.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, tokens: &[usize]) -> Result<Var> {
        if let Some(&id) = tokens.iter().find(|&&id| id >= self.vocab_size) {
            return Err(Error::OutOfVocabulary {
                id,
                vocab_size: self.vocab_size,
            });
        }
        if tokens.is_empty() {
            return Ok(tape.constant(Tensor::zeros(&[0, self.dim])));
        }
        let table = tape.param(store, self.table);
        tape.gather_rows(table, tokens)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn setup() -> (ParamStore<f64>, Embedding) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let emb = Embedding::new(&mut store, "emb", 10, 3, &mut rng).unwrap();
        (store, emb)
    }

    #[test]
    fn empty_and_repeated_tokens() {
        let (store, emb) = setup();
        let mut tape = Tape::new();
        let e = emb.forward(&mut tape, &store, &[]).unwrap();
        assert_eq!(tape.shape(e), &[0, 3]);
        let e = emb.forward(&mut tape, &store, &[5, 5]).unwrap();
        let d = tape.value(e).data();
        assert_eq!(&d[..3], &d[3..]);
    }

    #[test]
    fn out_of_vocabulary_is_error() {
        let (store, emb) = setup();
        let mut tape = Tape::new();
        assert!(matches!(
            emb.forward(&mut tape, &store, &[3, 10]),
            Err(Error::OutOfVocabulary { id: 10, .. })
        ));
    }

    /// Only the looked-up row has a gradient; finite differences over the
    /// whole table agree, so a plain gradient step moves row 7 alone.
    #[test]
    fn gradient_touches_only_used_row() {
        let (mut store, emb) = setup();
        let loss = |t: &mut Tape<f64>, p: &ParamStore<f64>| {
            let e = emb.forward(t, p, &[7])?;
            let sq = t.square(e);
            Ok(t.sum(sq))
        };
        let err = crate::tensor::grad_check(loss, &store, 1e-5).unwrap();
        assert!(err < 1e-6);

        let before = store.get(emb.table).clone();
        let mut tape = Tape::new();
        let l = loss(&mut tape, &store).unwrap();
        tape.backward(l).unwrap().accumulate_into(&mut store);
        let grad = store.get(emb.table).grad().unwrap().to_vec();
        let t = store.get_mut(emb.table);
        for (w, g) in t.data_mut().iter_mut().zip(&grad) {
            *w -= 0.1 * g;
        }
        let after = store.get(emb.table);
        for row in 0..10 {
            let changed = (0..3).any(|c| before.data()[row * 3 + c] != after.data()[row * 3 + c]);
            assert_eq!(changed, row == 7, "row {row}");
        }
    }
}
