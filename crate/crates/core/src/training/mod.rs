//! Cross-entropy training with Adam, per-epoch validation and the epoch trace.

mod adam;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState};

use crate::data::{WindowedSample, CHANNELS};
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::model::{loss_on_tape, ModelParams, SeTransformer};
use crate::tensor::{Scalar, Tape, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "f32" | "32" => Ok(Precision::F32),
            "f64" | "64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision `{other}` (f32 | f64)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub precision: Precision,
    /// Threads used for validation passes. Results do not depend on it.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 64,
            epochs: 65,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            precision: Precision::F32,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, rule: &str| Err(Error::Config(format!("{key}: must be {rule}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "a finite value > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size", ">= 1");
        }
        if self.epochs == 0 {
            return bad("epochs", ">= 1");
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return bad("beta1", "in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return bad("beta2", "in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps", "> 0");
        }
        if self.workers == 0 {
            return bad("workers", ">= 1");
        }
        Ok(())
    }
}

/// One line of the training trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_macro_precision: f64,
    pub val_macro_recall: f64,
    pub val_macro_f1: f64,
}

/// Stacks the chosen windows into `[batch, T, 3]` plus their labels.
pub fn make_batch<F: Scalar>(samples: &[WindowedSample], idx: &[usize]) -> Result<(Tensor<F>, Vec<usize>)> {
    let first = idx
        .first()
        .ok_or_else(|| Error::Contract("cannot build an empty batch".into()))?;
    let t = samples[*first].window_len();
    let mut data = Vec::with_capacity(idx.len() * t * CHANNELS);
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        let s = &samples[i];
        if s.x.len() != t * CHANNELS {
            return Err(Error::Dimension(format!(
                "window {i} has {} values, expected {}",
                s.x.len(),
                t * CHANNELS
            )));
        }
        data.extend(s.x.iter().map(|&v| F::lit(v as f64)));
        labels.push(s.label);
    }
    Ok((Tensor::new(&[idx.len(), t, CHANNELS], data)?, labels))
}

/// Forward, loss, backward and one Adam update on a single batch. Returns
/// the batch mean loss.
pub fn train_step<F: Scalar>(
    model: &mut SeTransformer<F>,
    x: &Tensor<F>,
    labels: &[usize],
    state: &mut AdamState<F>,
    cfg: &TrainConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = model.params.register(&mut tape);
    let xv = tape.constant(x);
    let (loss, _) = loss_on_tape(&mut tape, &vars, &model.config, xv, labels)?;
    let value = tape.item(loss).as_f64();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("loss {value}")));
    }
    tape.backward(loss)?;
    model.params.absorb_grads(&tape, &vars)?;
    adam_step(&mut model.params, state, cfg)?;
    model.params.clear_grads();
    Ok(value)
}

/// Batch order of one epoch: a permutation of `train` drawn from a stream of
/// the seeded generator dedicated to that epoch.
pub fn epoch_order(train: &[usize], seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order = train.to_vec();
    order.shuffle(&mut rng);
    order
}

/// One pass over shuffled mini-batches; the last, smaller batch is kept.
/// Returns the loss averaged over samples.
pub fn train_epoch<F: Scalar>(
    model: &mut SeTransformer<F>,
    samples: &[WindowedSample],
    train: &[usize],
    state: &mut AdamState<F>,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    if train.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    let order = epoch_order(train, cfg.seed, epoch);
    let mut total = 0.0;
    for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let (x, labels) = make_batch::<F>(samples, chunk)?;
        let loss = train_step(model, &x, &labels, state, cfg).map_err(|e| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("epoch {epoch}, batch {b}: {m}")),
            other => other,
        })?;
        total += loss * chunk.len() as f64;
    }
    Ok(total / train.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<usize>,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<F: Scalar>(xs: &[F]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `-log softmax(logits)[label]` via log-sum-exp, in f64.
pub fn sample_loss<F: Scalar>(logits: &[F], label: usize) -> f64 {
    let m = logits.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|v| (v.as_f64() - m).exp()).sum();
    (m - logits[label].as_f64()) + sum.ln()
}

fn eval_chunk<F: Scalar>(
    model: &SeTransformer<F>,
    samples: &[WindowedSample],
    idx: &[usize],
    batch_size: usize,
) -> Result<Vec<(f64, usize)>> {
    let k = model.config.num_classes;
    let mut out = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(batch_size) {
        let (x, labels) = make_batch::<F>(samples, chunk)?;
        let logits = model.logits(&x)?;
        for (row, &y) in logits.data().chunks_exact(k).zip(&labels) {
            if y >= k {
                return Err(Error::Contract(format!("label {y} out of range for {k} classes")));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("non-finite logits during evaluation".into()));
            }
            out.push((sample_loss(row, y), argmax(row)));
        }
    }
    Ok(out)
}

/// Scores `idx` with frozen parameters. The `workers` threads each take a
/// contiguous slice; per-sample results are reduced in index order, so the
/// outcome is identical for every worker count.
pub fn evaluate<F: Scalar>(
    model: &SeTransformer<F>,
    samples: &[WindowedSample],
    idx: &[usize],
    batch_size: usize,
    workers: usize,
) -> Result<Evaluation> {
    if idx.is_empty() {
        return Err(Error::Contract("cannot evaluate an empty dataset".into()));
    }
    let batch_size = batch_size.max(1);
    let workers = workers.clamp(1, idx.len());
    let per_sample: Vec<(f64, usize)> = if workers == 1 {
        eval_chunk(model, samples, idx, batch_size)?
    } else {
        let span = idx.len().div_ceil(workers);
        let parts: Vec<Result<Vec<(f64, usize)>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = idx
                .chunks(span)
                .map(|part| scope.spawn(move || eval_chunk(model, samples, part, batch_size)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        });
        let mut all = Vec::with_capacity(idx.len());
        for p in parts {
            all.extend(p?);
        }
        all
    };
    let mut confusion = ConfusionMatrix::new(model.config.num_classes);
    let mut loss = 0.0;
    let mut predictions = Vec::with_capacity(idx.len());
    for (&i, &(l, pred)) in idx.iter().zip(&per_sample) {
        loss += l;
        confusion.update(samples[i].label, pred)?;
        predictions.push(pred);
    }
    Ok(Evaluation {
        loss: loss / idx.len() as f64,
        confusion,
        predictions,
    })
}

#[derive(Clone, Debug)]
pub struct FitOutcome<F> {
    pub records: Vec<EpochRecord>,
    /// Parameters from the epoch with the highest validation accuracy
    /// (ties: lower validation loss, then earlier epoch).
    pub best: ModelParams<F>,
    pub best_epoch: usize,
    pub state: AdamState<F>,
}

/// `epochs` rounds of [`train_epoch`] followed by a validation pass.
/// `observer` sees every record and the model right after it is produced.
pub fn fit<F: Scalar>(
    model: &mut SeTransformer<F>,
    samples: &[WindowedSample],
    train: &[usize],
    val: &[usize],
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochRecord, &SeTransformer<F>) -> Result<()>,
) -> Result<FitOutcome<F>> {
    cfg.validate()?;
    if train.iter().any(|i| val.contains(i)) {
        return Err(Error::Contract("train and validation sets overlap".into()));
    }
    let mut state = AdamState::new(&model.config);
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, usize, ModelParams<F>)> = None;
    for epoch in 0..cfg.epochs {
        let train_loss = train_epoch(model, samples, train, &mut state, cfg, epoch)?;
        let ev = evaluate(model, samples, val, cfg.batch_size, cfg.workers)?;
        let s = ev.confusion.summarize();
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss: ev.loss,
            val_accuracy: s.accuracy,
            val_macro_precision: s.macro_precision,
            val_macro_recall: s.macro_recall,
            val_macro_f1: s.macro_f1,
        };
        let improves = best
            .as_ref()
            .is_none_or(|(acc, loss, _, _)| s.accuracy > *acc || (s.accuracy == *acc && ev.loss < *loss));
        if improves {
            best = Some((s.accuracy, ev.loss, epoch, model.params.clone()));
        }
        observer(&record, model)?;
        records.push(record);
    }
    let (_, _, best_epoch, best) = best.expect("at least one epoch");
    Ok(FitOutcome {
        records,
        best,
        best_epoch,
        state,
    })
}
