use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::params::ParamStore;

fn mat(rows: &[&[f64]]) -> Tensor<f64> {
    Tensor::matrix(rows).unwrap()
}

#[test]
fn matmul_identity_and_dot() {
    let mut tape = Tape::<f64>::new();
    let i = tape.constant(mat(&[&[1.0, 0.0], &[0.0, 1.0]]));
    let b = tape.constant(mat(&[&[3.0, 4.0], &[5.0, 6.0]]));
    let c = tape.matmul(i, b).unwrap();
    assert_eq!(tape.value(c).data(), &[3.0, 4.0, 5.0, 6.0]);

    let x = tape.constant(mat(&[&[1.0, 2.0]]));
    let y = tape.constant(mat(&[&[3.0], &[4.0]]));
    let z = tape.matmul(x, y).unwrap();
    assert_eq!(tape.value(z).data(), &[11.0]);
}

#[test]
fn matmul_zero_rows_and_mismatch() {
    let mut tape = Tape::<f64>::new();
    let a = tape.constant(Tensor::zeros(&[0, 3]));
    let b = tape.constant(Tensor::zeros(&[3, 2]));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.shape(c), &[0, 2]);

    let bad = tape.constant(Tensor::zeros(&[3, 3]));
    match tape.matmul(b, bad) {
        Err(Error::Shape { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![3, 2]);
            assert_eq!(rhs, vec![3, 3]);
        }
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn masked_softmax_examples() {
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(Tensor::zeros(&[1, 3]));
    let p = tape.masked_softmax(z, &Mask::all(3)).unwrap();
    for &v in tape.value(p).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    let p = tape
        .masked_softmax(z, &Mask::Shared(vec![true, false, true]))
        .unwrap();
    assert_eq!(tape.value(p).data(), &[0.5, 0.0, 0.5]);

    let x = tape.constant(mat(&[&[1.0, 2.0]]));
    let p = tape.masked_softmax(x, &Mask::all(2)).unwrap();
    let d = tape.value(p).data();
    assert!((d[0] - 0.26894).abs() < 1e-5 && (d[1] - 0.73106).abs() < 1e-5);
}

#[test]
fn masked_softmax_empty_support_is_error() {
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(Tensor::zeros(&[2, 2]));
    let r = tape.masked_softmax(z, &Mask::PerRow(vec![true, false, false, false]));
    assert!(matches!(r, Err(Error::EmptySupport { row: 1 })));
}

#[test]
fn backward_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::from_f64(&[2, 3], &[0.5, -1.0, 2.0, 3.0, 0.0, 1.0]).unwrap());
    let s = tape.sum(x);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap(), &[1.0; 6]);

    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap());
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap(), &[2.0, 4.0, 6.0]);

    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::from_f64(&[2], &[1.0, -4.0]).unwrap());
    let y = tape.add(x, x).unwrap();
    let s = tape.sum(y);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap(), &[2.0, 2.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::zeros(&[2]));
    assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
}

#[test]
fn param_grads_accumulate_until_zeroed() {
    let mut store = ParamStore::<f64>::new();
    let w = store.add("w", Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap()).unwrap();
    for _ in 0..2 {
        let mut tape = Tape::new();
        let v = tape.param(&store, w);
        let s = tape.sum(v);
        tape.backward(s).unwrap().accumulate_into(&mut store);
    }
    assert_eq!(store.get(w).grad().unwrap(), &[2.0, 2.0]);
    store.zero_grads();
    assert_eq!(store.get(w).grad().unwrap(), &[0.0, 0.0]);
}

#[test]
fn grad_check_examples() {
    let mut store = ParamStore::<f64>::new();
    let x = store.add("x", Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap()).unwrap();
    let err = grad_check(
        |t, p| {
            let v = t.param(p, x);
            let sq = t.square(v);
            Ok(t.sum(sq))
        },
        &store,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");

    let err = grad_check(
        |t, _| Ok(t.constant(Tensor::scalar(3.0))),
        &store,
        1e-5,
    )
    .unwrap();
    assert!(err.abs() < 1e-9);

    assert!(grad_check(|t, _| Ok(t.constant(Tensor::scalar(f64::NAN))), &store, 1e-5).is_err());
    assert!(grad_check(|t, _| Ok(t.constant(Tensor::scalar(0.0))), &store, 0.1).is_err());
}

fn random_store(rng: &mut ChaCha8Rng, shapes: &[(&str, &[usize])]) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    for (name, shape) in shapes {
        store.add_uniform(name, shape, 1.0, rng).unwrap();
    }
    store
}

/// Every primitive, composed into one scalar objective, against finite differences.
#[test]
fn composite_ops_pass_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let store = random_store(
        &mut rng,
        &[("a", &[3, 4]), ("b", &[4, 2]), ("row", &[1, 2]), ("col", &[3, 1]), ("table", &[5, 2])],
    );
    let ids = [4usize, 0, 4];
    let f = |t: &mut Tape<f64>, p: &ParamStore<f64>| {
        let a = t.param(p, p.id("a").unwrap());
        let b = t.param(p, p.id("b").unwrap());
        let row = t.param(p, p.id("row").unwrap());
        let col = t.param(p, p.id("col").unwrap());
        let table = t.param(p, p.id("table").unwrap());
        let ab = t.matmul(a, b)?;
        let h = t.add(ab, row)?;
        let h = t.mul(h, col)?;
        let e = t.gather_rows(table, &ids)?;
        let h = t.sub(h, e)?;
        let th = t.tanh(h);
        let sg = t.sigmoid(h);
        let re = t.relu(h);
        let cat = t.concat(&[th, sg, re], 1)?;
        let left = t.cols(cat, 1, 5)?;
        let tr = t.transpose(left)?;
        let mx = t.max_cols(tr)?;
        let sm = t.masked_softmax(cat, &Mask::Shared(vec![true, true, false, true, true, true]))?;
        let ex = t.exp(th);
        let lg = t.add(ex, sg)?;
        let lg = t.log(lg);
        let pooled = t.mean_axis(lg, 0)?;
        let summed = t.sum_axis(sm, 1)?;
        let s1 = t.square(pooled);
        let cl = t.clamp(h, -0.3, 0.3);
        let parts = [t.sum(s1), t.mean(mx), t.sum(summed), t.sum(cl)];
        let mut total = parts[0];
        for &x in &parts[1..] {
            total = t.add(total, x)?;
        }
        let w = t.matmul(tr, sm)?;
        let w = t.sum(w);
        let w = t.scale(w, 0.3);
        t.add(total, w)
    };
    let err = grad_check(f, &store, 1e-5).unwrap();
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn clamp_values_and_gradient() {
    let mut t = Tape::<f64>::new();
    let x = t.leaf(mat(&[&[-2.0, -0.5, 0.0, 0.5, 2.0]]));
    let y = t.clamp(x, -1.0, 1.0);
    assert_eq!(t.value(y).data(), &[-1.0, -0.5, 0.0, 0.5, 1.0]);
    let s = t.sum(y);
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap(), &[0.0, 1.0, 1.0, 1.0, 0.0]);
}

#[test]
fn backward_is_bitwise_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let store = random_store(&mut rng, &[("a", &[4, 4]), ("b", &[4, 4])]);
    let run = || {
        let mut s = store.clone();
        let mut t = Tape::new();
        let a = t.param(&s, s.id("a").unwrap());
        let b = t.param(&s, s.id("b").unwrap());
        let c = t.matmul(a, b).unwrap();
        let c = t.tanh(c);
        let c = t.matmul(c, a).unwrap();
        let l = t.sum(c);
        t.backward(l).unwrap().accumulate_into(&mut s);
        s.iter().map(|(_, x)| x.grad().unwrap().to_vec()).collect::<Vec<_>>()
    };
    let (x, y) = (run(), run());
    for (a, b) in x.iter().zip(&y) {
        for (p, q) in a.iter().zip(b) {
            assert_eq!(p.to_bits(), q.to_bits());
        }
    }
}

#[test]
fn generic_over_f32() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(Tensor::from_f64(&[1, 2], &[1.0, 2.0]).unwrap());
    let p = tape.masked_softmax(x, &Mask::all(2)).unwrap();
    let s: f32 = tape.value(p).data().iter().sum();
    assert!((s - 1.0).abs() < 1e-6);
}

proptest! {
    #[test]
    fn masked_softmax_rows_sum_to_one(
        rows in 1usize..5,
        cols in 1usize..7,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let mut mask: Vec<bool> = (0..rows * cols).map(|_| rng.gen_bool(0.6)).collect();
        for r in 0..rows {
            mask[r * cols + rng.gen_range(0..cols)] = true;
        }
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::new(vec![rows, cols], data).unwrap());
        let p = tape.masked_softmax(x, &Mask::PerRow(mask.clone())).unwrap();
        let d = tape.value(p).data();
        for r in 0..rows {
            let s: f64 = d[r * cols..(r + 1) * cols].iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            for c in 0..cols {
                if !mask[r * cols + c] {
                    prop_assert_eq!(d[r * cols + c], 0.0);
                }
            }
        }
    }

    #[test]
    fn concat_then_slice_recovers_parts(
        a_rows in 0usize..4,
        b_rows in 0usize..4,
        cols in 1usize..4,
    ) {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::full(&[a_rows, cols], 1.0));
        let b = tape.constant(Tensor::full(&[b_rows, cols], 2.0));
        let c = tape.concat(&[a, b], 0).unwrap();
        let back = tape.rows(c, a_rows, a_rows + b_rows).unwrap();
        prop_assert_eq!(tape.value(back), tape.value(b));
    }
}

#[test]
fn rejects_inconsistent_shape() {
    assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
}

#[test]
fn reshape_then_index_matches_flat() {
    let t = Tensor::<f64>::new(vec![6], (0..6).map(f64::from).collect()).unwrap();
    let r = t.clone().reshape(&[2, 3]).unwrap();
    for i in 0..2 {
        for j in 0..3 {
            assert_eq!(r.at(&[i, j]).unwrap(), t.data()[i * 3 + j]);
        }
    }
    let r3 = t.reshape(&[3, 1, 2]).unwrap();
    assert_eq!(r3.at(&[2, 0, 1]).unwrap(), 5.0);
}
