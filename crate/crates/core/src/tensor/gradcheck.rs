use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;

/// Compares tape gradients with central differences over every parameter entry.
///
/// Returns the largest `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<T, F>(f: F, params: &ParamStore<T>, epsilon: f64) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &ParamStore<T>) -> Result<Var>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(Error::invalid("grad_check", format!("epsilon {epsilon} outside (0, 1e-2]")));
    }
    let eval = |store: &ParamStore<T>| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(&mut tape, store)?;
        let v = tape.scalar_value(out).as_f64();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite(format!("grad_check objective = {v}")))
        }
    };

    let mut analytic = params.clone();
    analytic.zero_grads();
    {
        let mut tape = Tape::new();
        let out = f(&mut tape, &analytic)?;
        let v = tape.scalar_value(out).as_f64();
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("grad_check objective = {v}")));
        }
        let grads = tape.backward(out)?;
        grads.accumulate_into(&mut analytic);
    }

    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for id in params.ids() {
        for k in 0..params.get(id).len() {
            let a = analytic.get(id).grad().map_or(0.0, |g| g[k].as_f64());
            let orig = probe.get(id).data()[k];
            probe.get_mut(id).data_mut()[k] = orig + T::of(epsilon);
            let plus = eval(&probe)?;
            probe.get_mut(id).data_mut()[k] = orig - T::of(epsilon);
            let minus = eval(&probe)?;
            probe.get_mut(id).data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
