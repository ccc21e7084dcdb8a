use crate::params::ParamStore;
use crate::scalar::Scalar;

/// Adam with bias correction; moments are kept per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, lr: f64) -> Self {
        let zeros: Vec<Vec<T>> = store.iter().map(|(_, t)| vec![T::zero(); t.len()]).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Scales all gradients so their global L2 norm is at most `max_norm`;
    /// returns the norm before clipping.
    pub fn clip(store: &mut ParamStore<T>, max_norm: f64) -> f64 {
        let mut sq = 0.0;
        for (_, t) in store.iter() {
            if let Some(g) = t.grad() {
                sq += g.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
            }
        }
        let norm = sq.sqrt();
        if max_norm > 0.0 && norm > max_norm {
            let f = T::of(max_norm / norm);
            for id in store.ids().collect::<Vec<_>>() {
                store.get_mut(id).grad_mut().iter_mut().for_each(|g| *g *= f);
            }
        }
        norm
    }

    /// One update from the gradients currently held by `store`.
    pub fn update(&mut self, store: &mut ParamStore<T>) {
        self.step += 1;
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let one = T::one();
        let c1 = T::of(1.0 - self.beta1.powi(self.step as i32));
        let c2 = T::of(1.0 - self.beta2.powi(self.step as i32));
        let lr = T::of(self.lr);
        let eps = T::of(self.eps);
        for (k, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let t = store.get_mut(id);
            let Some(g) = t.grad().map(<[T]>::to_vec) else { continue };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (w, &gi)) in t.data_mut().iter_mut().zip(&g).enumerate() {
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn first_step_moves_by_lr_against_the_gradient_sign() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::from_f64(&[3], &[1.0, 1.0, 1.0]).unwrap()).unwrap();
        store.get_mut(id).grad_mut().copy_from_slice(&[2.0, -0.5, 0.0]);
        let mut adam = Adam::new(&store, 0.1);
        adam.update(&mut store);
        let w = store.get(id).data();
        assert!((w[0] - 0.9).abs() < 1e-7);
        assert!((w[1] - 1.1).abs() < 1e-7);
        assert_eq!(w[2], 1.0);
    }

    #[test]
    fn zero_lr_leaves_params() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::from_f64(&[2], &[0.3, -0.7]).unwrap()).unwrap();
        store.get_mut(id).grad_mut().copy_from_slice(&[2.0, -0.5]);
        let mut adam = Adam::new(&store, 0.0);
        adam.update(&mut store);
        assert_eq!(store.get(id).data(), &[0.3, -0.7]);
    }

    #[test]
    fn clip_rescales_to_the_bound() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::zeros(&[2])).unwrap();
        store.get_mut(id).grad_mut().copy_from_slice(&[3.0, 4.0]);
        assert_eq!(Adam::clip(&mut store, 1.0), 5.0);
        let g = store.get(id).grad().unwrap();
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
    }
}
