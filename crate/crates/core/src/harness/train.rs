use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::checkpoint::Checkpoint;
use super::config::{DataSource, RunConfig};
use super::eval::{evaluate, EvalOptions};
use crate::data::{gen_synthetic, load_squad_v1, read_jsonl, QAExample, SynthConfig, TextExample, Vocab};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::slicing::{QaModel, SliceSpec};
use crate::stopping::{answer_loss, extra_length, gold_stop_labels, infer_stop, stop_loss_node, total_loss};
use crate::tensor::{Tape, Var};

/// Encoded train and dev splits with the vocabulary built from train.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocab,
    pub train: Vec<QAExample>,
    pub dev: Vec<QAExample>,
    /// Questions dropped because no answer aligned.
    pub dropped: usize,
}

fn text_examples(records: Vec<crate::data::SynthRecord>) -> (Vec<TextExample>, usize) {
    let mut out = Vec::with_capacity(records.len());
    let mut dropped = 0;
    for r in records {
        match r.to_example() {
            Ok(e) => out.push(e),
            Err(_) => dropped += 1,
        }
    }
    (out, dropped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
}

/// Raw examples of one split and the number of questions dropped because
/// no answer aligned.
pub fn load_split(cfg: &RunConfig, split: Split) -> Result<(Vec<TextExample>, usize)> {
    let d = &cfg.data;
    let path = || match split {
        Split::Train => d.train_path.as_ref().expect("validated"),
        Split::Dev => d.dev_path.as_ref().expect("validated"),
    };
    match d.source {
        DataSource::Synthetic => {
            let synth = match split {
                Split::Train => d.synthetic.clone(),
                Split::Dev => SynthConfig {
                    num_examples: d.num_dev,
                    seed: d.dev_seed,
                    ..d.synthetic.clone()
                },
            };
            Ok(text_examples(gen_synthetic(&synth)?))
        }
        DataSource::Jsonl => Ok(text_examples(read_jsonl(path())?)),
        DataSource::Squad => {
            let l = load_squad_v1(path())?;
            Ok((l.examples, l.dropped))
        }
    }
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    cfg.validate()?;
    let (train, dt) = load_split(cfg, Split::Train)?;
    let (dev, dd) = load_split(cfg, Split::Dev)?;
    if dt + dd > 0 {
        warn!("dropped {} unalignable questions", dt + dd);
    }
    let vocab = Vocab::from_examples(&train, Some(cfg.layers.vocab_size));
    Ok(Dataset {
        train: vocab.encode_all(&train),
        dev: vocab.encode_all(&dev),
        vocab,
        dropped: dt + dd,
    })
}

/// Loss graph for one example.
#[derive(Debug, Clone)]
pub struct ExampleLoss {
    pub loss: Option<Var>,
    /// Number of answer-loss terms added (one per scored prefix).
    pub answer_terms: usize,
    /// Slice chosen by the stop head, when early stopping is on.
    pub stop_index: Option<usize>,
    pub answer_visible: bool,
}

/// Builds the training loss for `ex`. Without greedy training the answer
/// loss is taken once, at the full read (or at the chosen stop under early
/// stopping); with it, once per prefix that already contains the answer.
pub fn example_loss<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    model: &QaModel,
    ex: &QAExample,
    cfg: &RunConfig,
) -> Result<ExampleLoss> {
    let spec = SliceSpec::new(ex.context_len(), cfg.slicing.slice_size, cfg.slicing.mode)?;
    let n = spec.num_slices();
    let run = model.run(tape, store, ex, &spec, n)?;
    let answer_end = ex.answer_end();

    let (last, stop_index) = if cfg.train.early_stopping {
        let probs: Vec<f64> = run.stop_probs.iter().map(|&p| tape.scalar_value(p).as_f64()).collect();
        let d = infer_stop(&probs, cfg.stop.stop_threshold, &run.lengths_read)?;
        (d.stop_index + 1, Some(d.stop_index))
    } else {
        (n, None)
    };
    let answer_visible = answer_end < run.lengths_read[last - 1];
    let first = if cfg.train.greedy_training { 1 } else { last };
    let mut terms = Vec::new();
    for k in first..=last {
        if answer_end >= run.lengths_read[k - 1] {
            continue;
        }
        let logits = model.prefix_logits(tape, store, &run, k)?;
        if let Some(l) = answer_loss(tape, logits.start, logits.end, &ex.gold_spans)? {
            terms.push(l);
        }
    }
    let answer_terms = terms.len();
    let answer = match terms.len() {
        0 => None,
        1 => Some(terms[0]),
        _ => {
            let cat = tape.concat(&terms, 0)?;
            Some(tape.sum(cat))
        }
    };

    let loss = if cfg.train.early_stopping {
        let labels = gold_stop_labels(answer_end, &run.lengths_read)?;
        let extra: Vec<f64> = run
            .lengths_read
            .iter()
            .map(|&l| extra_length(l, answer_end, cfg.stop.dist_threshold))
            .collect();
        let stop = stop_loss_node(tape, &run.stop_probs, &labels, &extra)?;
        Some(total_loss(tape, answer, stop, answer_visible)?)
    } else {
        answer
    };
    Ok(ExampleLoss {
        loss,
        answer_terms,
        stop_index,
        answer_visible,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub grad_norm: f64,
    pub dev_f1: f64,
    pub dev_em: f64,
    pub dev_f1_early: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: QaModel,
    /// Parameters of the best epoch by dev F1.
    pub store: ParamStore<f64>,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    pub checkpoint: Checkpoint,
}

pub fn build_model(cfg: &RunConfig) -> Result<(QaModel, ParamStore<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut store = ParamStore::new();
    let model = QaModel::new(&mut store, &cfg.layers, cfg.stop.head_hidden_dim, &mut rng)?;
    Ok((model, store))
}

pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    let data = load_dataset(cfg)?;
    train_on(cfg, &data)
}

/// Mini-batch Adam on the configured loss, keeping the best dev epoch.
pub fn train_on(cfg: &RunConfig, data: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let (model, mut store) = build_model(cfg)?;
    let mut adam = Adam::new(&store, cfg.train.learning_rate);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ 0x5eed);
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, ParamStore<f64>, Adam<f64>)> = None;
    let mut stale = 0;
    let opts = EvalOptions { oracle: false };

    for epoch in 1..=cfg.train.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut norm_sum = 0.0;
        let batches = order.chunks(cfg.train.batch_size);
        let num_batches = batches.len();
        for (b, batch) in batches.enumerate() {
            store.zero_grads();
            let mut batch_loss = 0.0;
            for &i in batch {
                let mut tape = Tape::new();
                let out = example_loss(&mut tape, &store, &model, &data.train[i], cfg)?;
                let Some(loss) = out.loss else { continue };
                let scaled = tape.scale(loss, 1.0 / batch.len() as f64);
                let value = tape.scalar_value(loss);
                if !value.is_finite() {
                    debug!("non-finite loss {value} on example {i}, len {}", data.train[i].context_len());
                    return Err(Error::Diverged { epoch, batch: b });
                }
                batch_loss += value;
                tape.backward(scaled)?.accumulate_into(&mut store);
            }
            let norm = Adam::clip(&mut store, cfg.train.clip_norm);
            debug!("batch {b}: loss {batch_loss:.4} grad norm {norm:.4}");
            norm_sum += norm;
            adam.update(&mut store);
            loss_sum += batch_loss;
        }
        let dev = evaluate(&model, &store, &data.dev, cfg, opts)?;
        let log = EpochLog {
            epoch,
            train_loss: loss_sum / data.train.len() as f64,
            grad_norm: norm_sum / num_batches as f64,
            dev_f1: dev.summary.f1,
            dev_em: dev.summary.em,
            dev_f1_early: dev.summary.f1_early,
        };
        info!(
            "epoch {epoch}: loss {:.4} dev F1 {:.4} EM {:.4} F1(early) {:.4}",
            log.train_loss, log.dev_f1, log.dev_em, log.dev_f1_early
        );
        let improved = best.as_ref().is_none_or(|(_, f, _, _)| log.dev_f1 > *f);
        history.push(log);
        if improved {
            best = Some((epoch, dev.summary.f1, store.clone(), adam.clone()));
            stale = 0;
        } else {
            stale += 1;
            if cfg.train.patience > 0 && stale >= cfg.train.patience {
                info!("no dev improvement for {stale} epochs, stopping");
                break;
            }
        }
    }
    let (best_epoch, best_dev_f1, store, adam) = match best {
        Some(b) => b,
        None => (0, 0.0, store, adam),
    };
    let checkpoint = Checkpoint::capture(cfg, &data.vocab, &store, &adam, best_epoch, &history)?;
    Ok(TrainOutcome {
        model,
        store,
        history,
        best_epoch,
        best_dev_f1,
        checkpoint,
    })
}
