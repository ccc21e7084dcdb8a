//! End-to-end gradients of the training loss through the whole model.
//!
//! Deep compositions produce some gradient entries near 1e-8, below what
//! central differences resolve in f64, so entries are compared with a mixed
//! tolerance `|a − n| ≤ 1e-4 · (|a| + |n|) + 1e-9`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slicedqa::data::QAExample;
use slicedqa::harness::{build_model, example_loss, RunConfig};
use slicedqa::slicing::SliceMode;
use slicedqa::{ParamStore, Tape};

const EPS: f64 = 1e-5;

fn loss(cfg: &RunConfig, store: &ParamStore<f64>, ex: &QAExample) -> (f64, ParamStore<f64>) {
    let (model, _) = build_model(cfg).unwrap();
    let mut tape = Tape::new();
    let out = example_loss(&mut tape, store, &model, ex, cfg).unwrap();
    let l = out.loss.unwrap();
    let mut g = store.clone();
    g.zero_grads();
    tape.backward(l).unwrap().accumulate_into(&mut g);
    (tape.scalar_value(l), g)
}

fn check(cfg: &RunConfig, store: &ParamStore<f64>, ex: &QAExample) -> (usize, f64) {
    let (_, analytic) = loss(cfg, store, ex);
    let mut probe = store.clone();
    let mut entries = 0;
    let mut worst_abs = 0.0f64;
    for id in store.ids() {
        for k in 0..store.get(id).len() {
            let a = analytic.get(id).grad().map_or(0.0, |g| g[k]);
            let orig = probe.get(id).data()[k];
            probe.get_mut(id).data_mut()[k] = orig + EPS;
            let plus = loss(cfg, &probe, ex).0;
            probe.get_mut(id).data_mut()[k] = orig - EPS;
            let minus = loss(cfg, &probe, ex).0;
            probe.get_mut(id).data_mut()[k] = orig;
            let n = (plus - minus) / (2.0 * EPS);
            let tol = 1e-4 * (a.abs() + n.abs()) + 1e-9;
            assert!((a - n).abs() <= tol, "{} [{k}]: analytic {a:e} numeric {n:e}", store.name(id));
            worst_abs = worst_abs.max((a - n).abs());
            entries += 1;
        }
    }
    (entries, worst_abs)
}

fn tiny(mode: SliceMode, extra: &[&str]) -> RunConfig {
    let mut o = vec![
        "layers.vocab_size=8".to_string(),
        "layers.embed_dim=2".into(),
        "layers.hidden_dim=2".into(),
        "stop.head_hidden_dim=2".into(),
        "slicing.slice_size=3".into(),
        format!("slicing.mode=\"{mode}\""),
    ];
    o.extend(extra.iter().map(|s| s.to_string()));
    RunConfig::default().with_overrides(&o).unwrap()
}

fn example(span: (usize, usize)) -> QAExample {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    QAExample {
        id: "g".into(),
        question_tokens: vec![2, 5],
        context_tokens: (0..7).map(|_| rng.gen_range(0..8)).collect(),
        gold_spans: vec![span],
        context: String::new(),
        answers: vec![],
        offsets: vec![(0, 0); 7],
    }
}

fn run_mode(mode: SliceMode) {
    for (extra, span, stop_bias) in [
        (&[][..], (1, 2), None),
        (&["train.greedy_training=true"][..], (1, 2), None),
        (&["train.early_stopping=true"][..], (1, 2), Some(3.0)),
        (&["train.early_stopping=true"][..], (6, 6), Some(3.0)),
    ] {
        let cfg = tiny(mode, extra);
        let (_, mut store) = build_model(&cfg).unwrap();
        if let Some(b) = stop_bias {
            store.by_name_mut("stop.b2").unwrap().data_mut()[0] = b;
        }
        let (entries, worst) = check(&cfg, &store, &example(span));
        assert!(entries > 100);
        assert!(worst < 1e-8, "{mode} {extra:?}: {worst}");
    }
}

#[test]
fn sliced_prediction_gradients() {
    run_mode(SliceMode::SlicedPrediction);
}

#[test]
fn global_prediction_gradients() {
    run_mode(SliceMode::GlobalPrediction);
}

#[test]
fn step_transfer_gradients() {
    run_mode(SliceMode::StepTransfer);
}
