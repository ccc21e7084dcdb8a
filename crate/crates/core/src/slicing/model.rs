use rand_chacha::ChaCha8Rng;

use super::transfer::{StepTransfer, TransferState};
use super::{SliceMode, SliceSpec};
use crate::data::QAExample;
use crate::error::{Error, Result};
use crate::layers::{EncodedWindow, LayerConfig, PredictionHead, SpanLogits, WindowEncoder, WindowInit};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::stopping::StopHead;
use crate::tensor::{Tape, Var};

/// Window encoder, span head, step-transfer networks and stop head.
#[derive(Debug, Clone)]
pub struct QaModel {
    pub layers: LayerConfig,
    pub encoder: WindowEncoder,
    pub head: PredictionHead,
    pub transfer: StepTransfer,
    pub stop: StopHead,
}

/// Result of reading the first `upto` slices of a context.
#[derive(Debug, Clone)]
pub struct SliceRun {
    pub mode: SliceMode,
    pub windows: Vec<EncodedWindow>,
    /// Start/end logits of each read slice (for global prediction, the
    /// matching segments of the shared head's output).
    pub per_slice_logits: Vec<SpanLogits>,
    /// `1 × seen` rows over every token read so far.
    pub start: Var,
    pub end: Var,
    pub seen: usize,
    pub lengths_read: Vec<usize>,
    /// Per read slice, `1 × 1`.
    pub stop_probs: Vec<Var>,
    /// State that would seed the next slice (step transfer only).
    pub carried: Option<TransferState>,
}

impl QaModel {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        layers: &LayerConfig,
        stop_hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let encoder = WindowEncoder::new(store, layers, rng)?;
        let repr = layers.repr_dim();
        let head = PredictionHead::new(store, "head", repr, layers.hidden_dim, rng)?;
        let transfer = StepTransfer::new(store, layers, rng)?;
        let stop = StopHead::new(store, "stop", repr, stop_hidden, rng)?;
        Ok(QaModel {
            layers: layers.clone(),
            encoder,
            head,
            transfer,
            stop,
        })
    }

    fn question<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, ex: &QAExample) -> Result<Var> {
        self.encoder.encode_question(tape, store, &ex.question_tokens)
    }

    fn check_spec(ex: &QAExample, spec: &SliceSpec, upto: usize) -> Result<()> {
        if spec.context_len() != ex.context_len() {
            return Err(Error::invalid(
                "slice run",
                format!("spec covers {} tokens, context has {}", spec.context_len(), ex.context_len()),
            ));
        }
        if upto == 0 || upto > spec.num_slices() {
            return Err(Error::invalid(
                "slice run",
                format!("upto_slice {upto} outside 1..={}", spec.num_slices()),
            ));
        }
        Ok(())
    }

    /// Reads slices `0..upto` in `spec.mode`.
    pub fn run<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        ex: &QAExample,
        spec: &SliceSpec,
        upto: usize,
    ) -> Result<SliceRun> {
        match spec.mode {
            SliceMode::SlicedPrediction => self.run_sliced(tape, store, ex, spec, upto),
            SliceMode::GlobalPrediction => self.run_global(tape, store, ex, spec, upto),
            SliceMode::StepTransfer => self.run_step_transfer(tape, store, ex, spec, upto),
        }
    }

    /// The whole context as one window.
    pub fn monolithic<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, ex: &QAExample) -> Result<SliceRun> {
        let spec = SliceSpec::new(ex.context_len(), ex.context_len(), SliceMode::SlicedPrediction)?;
        self.run_sliced(tape, store, ex, &spec, 1)
    }

    pub fn run_sliced<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        ex: &QAExample,
        spec: &SliceSpec,
        upto: usize,
    ) -> Result<SliceRun> {
        Self::check_spec(ex, spec, upto)?;
        let q = self.question(tape, store, ex)?;
        let mut windows = Vec::with_capacity(upto);
        let mut logits = Vec::with_capacity(upto);
        for &(s, e) in &spec.boundaries[..upto] {
            let w = self
                .encoder
                .encode_window(tape, store, &ex.context_tokens[s..e], q, &WindowInit::default())?;
            logits.push(self.head.forward(tape, store, w.token_reprs, &vec![true; e - s])?);
            windows.push(w);
        }
        self.finish(tape, store, SliceMode::SlicedPrediction, spec, windows, logits, None)
    }

    /// Encodes every slice, scores the concatenation with one head, and masks
    /// slices past `upto` out of the head's normalisation. The returned
    /// logits cover the read prefix only.
    pub fn run_global<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        ex: &QAExample,
        spec: &SliceSpec,
        upto: usize,
    ) -> Result<SliceRun> {
        Self::check_spec(ex, spec, upto)?;
        let q = self.question(tape, store, ex)?;
        let mut windows = Vec::with_capacity(spec.num_slices());
        for &(s, e) in &spec.boundaries {
            windows.push(
                self.encoder
                    .encode_window(tape, store, &ex.context_tokens[s..e], q, &WindowInit::default())?,
            );
        }
        let reprs: Vec<Var> = windows.iter().map(|w| w.token_reprs).collect();
        let all = tape.concat(&reprs, 0)?;
        let seen = spec.boundaries[upto - 1].1;
        let support: Vec<bool> = (0..ex.context_len()).map(|i| i < seen).collect();
        let full = self.head.forward(tape, store, all, &support)?;
        windows.truncate(upto);
        let start = tape.cols(full.start, 0, seen)?;
        let end = tape.cols(full.end, 0, seen)?;
        let mut logits = Vec::with_capacity(upto);
        for &(s, e) in &spec.boundaries[..upto] {
            logits.push(SpanLogits {
                start: tape.cols(start, s, e)?,
                end: tape.cols(end, s, e)?,
            });
        }
        let stop_probs = self.stop_probs(tape, store, &windows)?;
        Ok(SliceRun {
            mode: SliceMode::GlobalPrediction,
            windows,
            per_slice_logits: logits,
            start,
            end,
            seen,
            lengths_read: spec.lengths_read()[..upto].to_vec(),
            stop_probs,
            carried: None,
        })
    }

    pub fn run_step_transfer<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        ex: &QAExample,
        spec: &SliceSpec,
        upto: usize,
    ) -> Result<SliceRun> {
        Self::check_spec(ex, spec, upto)?;
        let q = self.question(tape, store, ex)?;
        let mut windows = Vec::with_capacity(upto);
        let mut logits = Vec::with_capacity(upto);
        let mut carried: Option<TransferState> = None;
        for &(s, e) in &spec.boundaries[..upto] {
            let init = match carried.take() {
                Some(t) => WindowInit {
                    contextual: Some(t.contextual),
                    modeling: Some(t.modeling),
                },
                None => WindowInit::default(),
            };
            let w = self
                .encoder
                .encode_window(tape, store, &ex.context_tokens[s..e], q, &init)?;
            logits.push(self.head.forward(tape, store, w.token_reprs, &vec![true; e - s])?);
            carried = Some(self.step_transfer(tape, store, &w)?);
            windows.push(w);
        }
        self.finish(tape, store, SliceMode::StepTransfer, spec, windows, logits, carried)
    }

    /// Initial states for the slice after `window`.
    pub fn step_transfer<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        window: &EncodedWindow,
    ) -> Result<TransferState> {
        self.transfer.forward(tape, store, window)
    }

    pub fn stop_probability<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, window: &EncodedWindow) -> Result<Var> {
        self.stop.forward(tape, store, window.token_reprs)
    }

    fn stop_probs<T: Scalar>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, windows: &[EncodedWindow]) -> Result<Vec<Var>> {
        windows.iter().map(|w| self.stop_probability(tape, store, w)).collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn finish<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        mode: SliceMode,
        spec: &SliceSpec,
        windows: Vec<EncodedWindow>,
        logits: Vec<SpanLogits>,
        carried: Option<TransferState>,
    ) -> Result<SliceRun> {
        let upto = windows.len();
        let (start, end) = if logits.len() == 1 {
            (logits[0].start, logits[0].end)
        } else {
            let s: Vec<Var> = logits.iter().map(|l| l.start).collect();
            let e: Vec<Var> = logits.iter().map(|l| l.end).collect();
            (tape.concat(&s, 1)?, tape.concat(&e, 1)?)
        };
        let stop_probs = self.stop_probs(tape, store, &windows)?;
        Ok(SliceRun {
            mode,
            windows,
            per_slice_logits: logits,
            start,
            end,
            seen: spec.boundaries[upto - 1].1,
            lengths_read: spec.lengths_read()[..upto].to_vec(),
            stop_probs,
            carried,
        })
    }

    /// Logits the model would produce after reading only the first `k`
    /// slices of `run`. For the sliced modes these are a prefix of the run's
    /// logits; for global prediction the head is re-applied to the first `k`
    /// slice encodings, which equals masking the rest.
    pub fn prefix_logits<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        run: &SliceRun,
        k: usize,
    ) -> Result<SpanLogits> {
        if k == 0 || k > run.windows.len() {
            return Err(Error::invalid("prefix_logits", format!("prefix {k} outside 1..={}", run.windows.len())));
        }
        let len = run.lengths_read[k - 1];
        if k == run.windows.len() {
            return Ok(SpanLogits {
                start: run.start,
                end: run.end,
            });
        }
        match run.mode {
            SliceMode::GlobalPrediction => {
                let reprs: Vec<Var> = run.windows[..k].iter().map(|w| w.token_reprs).collect();
                let all = tape.concat(&reprs, 0)?;
                self.head.forward(tape, store, all, &vec![true; len])
            }
            _ => Ok(SpanLogits {
                start: tape.cols(run.start, 0, len)?,
                end: tape.cols(run.end, 0, len)?,
            }),
        }
    }
}

/// Highest-scoring span `(s, e)` with `s ≤ e < s + max_len`, scoring
/// `start[s] + end[e]`; ties go to the earliest span.
pub fn decode_span<T: Scalar>(start: &[T], end: &[T], max_len: usize) -> Option<(usize, usize)> {
    let n = start.len().min(end.len());
    let mut best: Option<((usize, usize), T)> = None;
    for (s, &a) in start[..n].iter().enumerate() {
        for (e, &b) in end.iter().enumerate().take(n.min(s + max_len.max(1))).skip(s) {
            let score = a + b;
            if best.is_none_or(|(_, top)| score > top) {
                best = Some(((s, e), score));
            }
        }
    }
    best.map(|(span, _)| span)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::tensor::Tensor;

    fn tiny(seed: u64) -> (ParamStore<f64>, QaModel) {
        let cfg = LayerConfig {
            vocab_size: 20,
            embed_dim: 4,
            hidden_dim: 3,
            ..LayerConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let model = QaModel::new(&mut store, &cfg, 3, &mut rng).unwrap();
        (store, model)
    }

    fn example(context: Vec<usize>, span: (usize, usize)) -> QAExample {
        let n = context.len();
        QAExample {
            id: "t".into(),
            question_tokens: vec![3, 4],
            context_tokens: context,
            gold_spans: vec![span],
            context: String::new(),
            answers: vec![],
            offsets: vec![(0, 0); n],
        }
    }

    fn values(tape: &Tape<f64>, v: Var) -> Vec<f64> {
        tape.value(v).data().to_vec()
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode_span(&[0.0, 5.0, 0.0], &[0.0, 0.0, 3.0], 3), Some((1, 2)));
        assert_eq!(decode_span(&[0.0, 5.0, 0.0], &[9.0, 0.0, 3.0], 3), Some((0, 0)));
        assert_eq!(decode_span(&[0.0, 5.0, 0.0, 0.0], &[0.0, 0.0, 0.0, 3.0], 2), Some((1, 1)));
        assert_eq!(decode_span::<f64>(&[], &[], 3), None);
    }

    #[test]
    fn every_mode_reduces_to_monolithic_with_one_slice() {
        let (store, model) = tiny(1);
        let ex = example(vec![5, 6, 7, 8, 9], (1, 2));
        let mut tape = Tape::new();
        let mono = model.monolithic(&mut tape, &store, &ex).unwrap();
        for mode in SliceMode::ALL {
            for size in [5, 9] {
                let spec = SliceSpec::new(5, size, mode).unwrap();
                let run = model.run(&mut tape, &store, &ex, &spec, 1).unwrap();
                assert_eq!(values(&tape, run.start), values(&tape, mono.start), "{mode}");
                assert_eq!(values(&tape, run.end), values(&tape, mono.end), "{mode}");
            }
        }
    }

    #[test]
    fn sliced_mode_is_order_blind() {
        let (store, model) = tiny(2);
        let a = example(vec![5, 6, 7, 8, 9, 10], (0, 0));
        let b = example(vec![8, 9, 10, 5, 6, 7], (0, 0));
        let mut tape = Tape::new();
        let spec = SliceSpec::new(6, 3, SliceMode::SlicedPrediction).unwrap();
        let ra = model.run(&mut tape, &store, &a, &spec, 2).unwrap();
        let rb = model.run(&mut tape, &store, &b, &spec, 2).unwrap();
        let (sa, sb) = (values(&tape, ra.start), values(&tape, rb.start));
        assert_eq!(sa[..3], sb[3..]);
        assert_eq!(sa[3..], sb[..3]);
        let (ea, eb) = (values(&tape, ra.end), values(&tape, rb.end));
        assert_eq!(ea[..3], eb[3..]);
    }

    #[test]
    fn step_transfer_is_order_sensitive_and_prefix_stable() {
        let (store, model) = tiny(3);
        let a = example(vec![5, 6, 7, 8, 9, 10], (0, 0));
        let b = example(vec![8, 9, 10, 5, 6, 7], (0, 0));
        let spec = SliceSpec::new(6, 3, SliceMode::StepTransfer).unwrap();
        let mut tape = Tape::new();
        let ra = model.run(&mut tape, &store, &a, &spec, 2).unwrap();
        let rb = model.run(&mut tape, &store, &b, &spec, 2).unwrap();
        let (sa, sb) = (values(&tape, ra.start), values(&tape, rb.start));
        let diff = sa[..3].iter().zip(&sb[3..]).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff > 1e-9, "{diff}");

        let one = model.run(&mut tape, &store, &a, &spec, 1).unwrap();
        assert_eq!(values(&tape, one.start), sa[..3]);
        assert_eq!(one.seen, 3);
        assert_eq!(ra.lengths_read, vec![3, 6]);
    }

    #[test]
    fn step_transfer_ignores_later_slices() {
        let (store, model) = tiny(4);
        let a = example(vec![5, 6, 7, 8, 9, 10, 11], (0, 0));
        let b = example(vec![5, 6, 7, 8, 12, 13, 14], (0, 0));
        let spec = SliceSpec::new(7, 2, SliceMode::StepTransfer).unwrap();
        let mut tape = Tape::new();
        let ra = model.run(&mut tape, &store, &a, &spec, 4).unwrap();
        let rb = model.run(&mut tape, &store, &b, &spec, 4).unwrap();
        assert_eq!(values(&tape, ra.start)[..4], values(&tape, rb.start)[..4]);
        assert_eq!(values(&tape, ra.end)[..4], values(&tape, rb.end)[..4]);
        assert_ne!(values(&tape, ra.start)[4..], values(&tape, rb.start)[4..]);
    }

    #[test]
    fn global_mask_matches_truncation() {
        let (store, model) = tiny(5);
        let ex = example(vec![5, 6, 7, 8, 9, 10, 11], (5, 6));
        let spec = SliceSpec::new(7, 3, SliceMode::GlobalPrediction).unwrap();
        let mut tape = Tape::new();
        for k in 1..=spec.num_slices() {
            let run = model.run(&mut tape, &store, &ex, &spec, k).unwrap();
            let short = ex.truncated(run.seen);
            let short_spec = SliceSpec::new(run.seen, 3, SliceMode::GlobalPrediction).unwrap();
            let cut = model.run(&mut tape, &store, &short, &short_spec, k).unwrap();
            assert_eq!(values(&tape, run.start), values(&tape, cut.start));
            assert_eq!(values(&tape, run.end), values(&tape, cut.end));
            let full = model.run(&mut tape, &store, &ex, &spec, spec.num_slices()).unwrap();
            let pre = model.prefix_logits(&mut tape, &store, &full, k).unwrap();
            assert_eq!(values(&tape, pre.end), values(&tape, cut.end));
        }
    }

    #[test]
    fn transfer_net_hand_cases() {
        let (mut store, model) = tiny(6);
        for net in model.transfer.contextual.iter().chain(&model.transfer.modeling) {
            for id in [net.w1, net.w2] {
                store.get_mut(id).data_mut().fill(0.0);
            }
            let b2 = store.get_mut(net.b2);
            b2.data_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
        }
        let ex = example(vec![5, 6, 7, 8], (0, 0));
        let mut tape = Tape::new();
        let spec = SliceSpec::new(4, 2, SliceMode::StepTransfer).unwrap();
        let run = model.run(&mut tape, &store, &ex, &spec, 1).unwrap();
        let carried = run.carried.unwrap();
        for v in carried.contextual.iter().chain(&carried.modeling) {
            assert_eq!(values(&tape, *v), vec![0.5, -1.0, 1.0]);
        }

        // 2-dim input, hidden 2, output 1:
        // h = relu([1, 3]·[[1, 0], [0.5, −1]] + [0, 1]) = relu([2.5, −2]) = [2.5, 0]
        // o = 2.5·2 + 0·7 − 4.5 = 0.5, and with bias −1 it is 4, clamped to 1
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::<f64>::new();
        let net = super::super::TransferNet::new(&mut s, "n", 2, 2, 1, &mut rng).unwrap();
        s.get_mut(net.w1).data_mut().copy_from_slice(&[1.0, 0.0, 0.5, -1.0]);
        s.get_mut(net.b1).data_mut().copy_from_slice(&[0.0, 1.0]);
        s.get_mut(net.w2).data_mut().copy_from_slice(&[2.0, 7.0]);
        s.get_mut(net.b2).data_mut().copy_from_slice(&[-4.5]);
        let mut tape = Tape::new();
        let reprs = tape.constant(Tensor::matrix(&[&[0.0, 4.0], &[2.0, 2.0]]).unwrap());
        let pooled = tape.mean_axis(reprs, 0).unwrap();
        assert_eq!(values(&tape, pooled), vec![1.0, 3.0]);
        let o = net.forward(&mut tape, &s, pooled).unwrap();
        assert_eq!(values(&tape, o), vec![0.5]);
        s.get_mut(net.b2).data_mut().copy_from_slice(&[-1.0]);
        let mut tape = Tape::new();
        let pooled = tape.constant(Tensor::new(vec![1, 2], vec![1.0, 3.0]).unwrap());
        let o = net.forward(&mut tape, &s, pooled).unwrap();
        assert_eq!(values(&tape, o), vec![1.0]);
    }

    #[test]
    fn bad_runs_are_rejected() {
        let (store, model) = tiny(7);
        let ex = example(vec![5, 6, 7], (0, 0));
        let mut tape = Tape::new();
        let spec = SliceSpec::new(3, 2, SliceMode::SlicedPrediction).unwrap();
        assert!(model.run(&mut tape, &store, &ex, &spec, 0).is_err());
        assert!(model.run(&mut tape, &store, &ex, &spec, 3).is_err());
        let other = SliceSpec::new(4, 2, SliceMode::SlicedPrediction).unwrap();
        assert!(model.run(&mut tape, &store, &ex, &other, 1).is_err());
    }
}
