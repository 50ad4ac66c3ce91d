//! Loss, optimizer, learning-rate schedule and the epoch loop.

pub mod adam;
pub mod loss;
pub mod schedule;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::AdamState;
pub use loss::{bce_loss, LossValue};
pub use schedule::{Plateau, PlateauStep};

use crate::error::{Error, Result};
use crate::model::{Architecture, Freeze, MetaFeatures, Model, ProbeTarget, META_DIM, NUM_LABELS};
use crate::tensor::ops::{self, NormMode};
use crate::tensor::{no_grad, Tensor};

/// One mini-batch. `meta` always holds the three non-image features; it is
/// fed to the model only when the architecture fuses it.
#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Option<Tensor>,
    pub meta: Tensor,
    /// `[N, 15]` binary label vectors.
    pub labels: Tensor,
}

/// Random-access example source.
pub trait Samples: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Assembles the examples at `indices`. With `augment = Some(seed)` the
    /// training augmentation is applied, driven only by `seed` and each
    /// example's position in the batch.
    fn batch(&self, indices: &[usize], augment: Option<u64>) -> Result<Batch>;
}

/// Examples held as ready-made tensors. `channels = 0` means no images.
#[derive(Clone, Debug)]
pub struct TensorSamples {
    pub channels: usize,
    pub size: usize,
    pub images: Vec<f32>,
    pub meta: Vec<MetaFeatures>,
    pub labels: Vec<f32>,
}

impl TensorSamples {
    pub fn new(channels: usize, size: usize, images: Vec<f32>, meta: Vec<MetaFeatures>, labels: Vec<f32>) -> Result<Self> {
        let n = meta.len();
        if images.len() != n * channels * size * size || labels.len() != n * NUM_LABELS {
            return Err(Error::shape(format!(
                "{n} examples need {} image values and {} labels, got {} and {}",
                n * channels * size * size,
                n * NUM_LABELS,
                images.len(),
                labels.len()
            )));
        }
        loss::check_binary(&labels)?;
        Ok(TensorSamples {
            channels,
            size,
            images,
            meta,
            labels,
        })
    }

    pub fn subset(&self, indices: &[usize]) -> TensorSamples {
        let px = self.channels * self.size * self.size;
        TensorSamples {
            channels: self.channels,
            size: self.size,
            images: indices.iter().flat_map(|&i| self.images[i * px..(i + 1) * px].iter().copied()).collect(),
            meta: indices.iter().map(|&i| self.meta[i]).collect(),
            labels: indices
                .iter()
                .flat_map(|&i| self.labels[i * NUM_LABELS..(i + 1) * NUM_LABELS].iter().copied())
                .collect(),
        }
    }
}

impl Samples for TensorSamples {
    fn len(&self) -> usize {
        self.meta.len()
    }

    fn batch(&self, indices: &[usize], _augment: Option<u64>) -> Result<Batch> {
        let n = indices.len();
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::usage(format!("example {bad} out of range for {} examples", self.len())));
        }
        let images = if self.channels == 0 {
            None
        } else {
            let px = self.channels * self.size * self.size;
            let mut data = Vec::with_capacity(n * px);
            for &i in indices {
                data.extend_from_slice(&self.images[i * px..(i + 1) * px]);
            }
            Some(Tensor::new(vec![n, self.channels, self.size, self.size], data)?)
        };
        let meta: Vec<MetaFeatures> = indices.iter().map(|&i| self.meta[i]).collect();
        let mut labels = Vec::with_capacity(n * NUM_LABELS);
        for &i in indices {
            labels.extend_from_slice(&self.labels[i * NUM_LABELS..(i + 1) * NUM_LABELS]);
        }
        Ok(Batch {
            images,
            meta: MetaFeatures::batch_tensor(&meta)?,
            labels: Tensor::new(vec![n, NUM_LABELS], labels)?,
        })
    }
}

/// What the model is trained to predict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Class-averaged BCE against the 15 labels (or a binary attribute for
    /// probes), computed from logits.
    Bce,
    /// Mean absolute error of the raw output (age probe).
    AbsoluteError,
}

impl Objective {
    pub fn for_model(model: &Model) -> Objective {
        if model.architecture().sigmoid_output() {
            Objective::Bce
        } else {
            Objective::AbsoluteError
        }
    }
}

/// Training targets of `batch` for `model`.
pub fn targets(model: &Model, batch: &Batch) -> Result<Tensor> {
    match model.architecture() {
        Architecture::Probe { target, .. } => {
            let column = match target {
                ProbeTarget::Age => 0,
                ProbeTarget::Gender => 1,
                ProbeTarget::View => 2,
            };
            debug_assert_eq!(batch.meta.shape()[1], META_DIM);
            Ok(no_grad(|| ops::column(&batch.meta, column))?.detach())
        }
        _ => Ok(batch.labels.clone()),
    }
}

fn run_model(model: &Model, batch: &Batch, mode: NormMode) -> Result<crate::model::ForwardOutput> {
    let meta = model.architecture().uses_meta().then_some(&batch.meta);
    model.forward(batch.images.as_ref(), meta, mode)
}

/// Loss tensor of one batch under `objective`.
pub fn batch_loss(model: &Model, batch: &Batch, objective: Objective, mode: NormMode) -> Result<Tensor> {
    let out = run_model(model, batch, mode)?;
    let y = targets(model, batch)?;
    match objective {
        Objective::Bce => ops::bce_with_logits(&out.logits, &y),
        Objective::AbsoluteError => ops::mean_abs_error(&out.output, &y),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub batch_size: usize,
    pub initial_lr: f64,
    pub plateau_factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    pub max_epochs: usize,
    /// Batch size used for validation and prediction passes.
    pub eval_batch_size: usize,
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainPlan {
    fn default() -> Self {
        TrainPlan {
            batch_size: 16,
            initial_lr: 0.01,
            plateau_factor: 0.5,
            patience: 1,
            min_lr: 1e-6,
            max_epochs: 50,
            eval_batch_size: 32,
            augment: true,
            seed: 0,
        }
    }
}

impl TrainPlan {
    /// Learning rate 0.001 for transfer learning and 0.01 from scratch;
    /// batch size 8 for large inputs trained from scratch, 16 otherwise.
    pub fn for_model(model: &Model, seed: u64) -> TrainPlan {
        let (lr, batch) = match model.architecture() {
            Architecture::Resnet { config } => {
                let transfer = config.freeze != Freeze::None;
                let lr = if transfer { 0.001 } else { 0.01 };
                let batch = if !transfer && config.input_size == 448 { 8 } else { 16 };
                (lr, batch)
            }
            Architecture::Probe { .. } => (0.001, 16),
            Architecture::MetaMlp { .. } => (0.01, 16),
        };
        TrainPlan {
            batch_size: batch,
            initial_lr: lr,
            seed,
            ..TrainPlan::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.initial_lr)));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::Config(format!("plateau factor {} must be in (0, 1)", self.plateau_factor)));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max_epochs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_loss", "val_loss", "lr"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                format!("{:.8}", e.train_loss),
                format!("{:.8}", e.val_loss),
                format!("{:e}", e.lr),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<history>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(f)
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs
            .iter()
            .fold(None, |best: Option<&EpochRecord>, e| match best {
                Some(b) if b.val_loss <= e.val_loss => Some(b),
                _ => Some(e),
            })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: History,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    order
}

fn batch_seed(seed: u64, epoch: usize, batch: usize) -> u64 {
    seed.wrapping_add(0xA076_1D64_78BD_642F)
        .wrapping_mul(epoch as u64 + 1)
        .rotate_left(17)
        ^ (batch as u64).wrapping_mul(0xE703_7ED1_A0B4_28DB)
}

/// Mean loss over every example of `data`, evaluated with running
/// statistics and without gradient tracking.
pub fn evaluate_loss(model: &Model, data: &dyn Samples, objective: Objective, batch_size: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::usage("cannot evaluate on an empty example set"));
    }
    let indices: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0f64;
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = data.batch(chunk, None)?;
        let loss = no_grad(|| batch_loss(model, &batch, objective, NormMode::Eval))?;
        total += loss.item()? as f64 * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Trains `model` per `plan`. After each epoch the full validation loss is
/// computed; the model is left holding the parameters of the epoch with the
/// lowest validation loss.
///
/// A non-finite loss or gradient aborts with [`Error::Diverged`] after
/// restoring the best parameters seen so far (or the initial ones).
pub fn train(model: &mut Model, plan: &TrainPlan, train_set: &dyn Samples, val_set: &dyn Samples) -> Result<TrainOutcome> {
    plan.validate()?;
    if train_set.is_empty() {
        return Err(Error::usage("training set is empty"));
    }
    if val_set.is_empty() {
        return Err(Error::usage("validation set is empty"));
    }
    if model.params().trainable().next().is_none() {
        return Err(Error::usage("model has no trainable parameters"));
    }
    let objective = Objective::for_model(model);
    let mut adam = AdamState::new(plan.initial_lr);
    let mut plateau = Plateau::new(plan.initial_lr, plan.plateau_factor, plan.patience, plan.min_lr);
    let mut history = History::default();
    let mut best: Option<(usize, f64, Vec<Vec<f32>>)> = None;
    let initial = model.params().snapshot();

    let diverged = |model: &mut Model, best: &Option<(usize, f64, Vec<Vec<f32>>)>, epoch: usize, message: String| {
        let snapshot = best.as_ref().map(|b| &b.2).unwrap_or(&initial);
        match model.params().restore(snapshot) {
            Ok(()) => Error::Diverged { epoch, message },
            Err(e) => e,
        }
    };

    for epoch in 1..=plan.max_epochs {
        let lr = plateau.lr();
        adam.lr = lr;
        let order = epoch_order(train_set.len(), plan.seed, epoch);
        let mut total = 0.0f64;
        for (b, chunk) in order.chunks(plan.batch_size).enumerate() {
            let augment = plan.augment.then(|| batch_seed(plan.seed, epoch, b));
            let batch = train_set.batch(chunk, augment)?;
            let loss = batch_loss(model, &batch, objective, NormMode::Train)?;
            let value = loss.item()? as f64;
            if !value.is_finite() {
                return Err(diverged(model, &best, epoch, format!("training loss became {value} in batch {b}")));
            }
            model.zero_grad();
            loss.backward()?;
            if let Err(e) = adam.step(model.params()) {
                return Err(match e {
                    Error::Numeric { message, .. } => diverged(model, &best, epoch, message),
                    other => other,
                });
            }
            total += value * chunk.len() as f64;
        }
        model.zero_grad();
        let train_loss = total / train_set.len() as f64;
        let val_loss = evaluate_loss(model, val_set, objective, plan.eval_batch_size)?;
        if !val_loss.is_finite() {
            return Err(diverged(model, &best, epoch, format!("validation loss became {val_loss}")));
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        if best.as_ref().map_or(true, |b| val_loss < b.1) {
            best = Some((epoch, val_loss, model.params().snapshot()));
        }
        if plateau.observe(val_loss) == PlateauStep::Exhausted {
            break;
        }
    }
    let (best_epoch, best_val_loss, snapshot) = best.expect("at least one epoch ran");
    model.params().restore(&snapshot)?;
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_loss,
    })
}

/// Model outputs and aligned targets over a whole example set.
#[derive(Clone, Debug)]
pub struct Predictions {
    pub rows: usize,
    /// Output width (15 for classifiers, 1 for probes).
    pub width: usize,
    /// Row-major `[rows, width]` probabilities (raw values for the age probe).
    pub outputs: Vec<f32>,
    /// Row-major `[rows, 15]` label vectors.
    pub labels: Vec<f32>,
    /// Row-major `[rows, 3]` scaled age, gender, view.
    pub meta: Vec<f32>,
}

impl Predictions {
    pub fn output_column(&self, j: usize) -> Vec<f32> {
        (0..self.rows).map(|i| self.outputs[i * self.width + j]).collect()
    }

    pub fn label_column(&self, j: usize) -> Vec<f32> {
        (0..self.rows).map(|i| self.labels[i * NUM_LABELS + j]).collect()
    }

    pub fn meta_column(&self, j: usize) -> Vec<f32> {
        (0..self.rows).map(|i| self.meta[i * META_DIM + j]).collect()
    }
}

pub fn predict(model: &Model, data: &dyn Samples, batch_size: usize) -> Result<Predictions> {
    let indices: Vec<usize> = (0..data.len()).collect();
    let width = model.architecture().num_outputs();
    let mut p = Predictions {
        rows: data.len(),
        width,
        outputs: Vec::with_capacity(data.len() * width),
        labels: Vec::with_capacity(data.len() * NUM_LABELS),
        meta: Vec::with_capacity(data.len() * META_DIM),
    };
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = data.batch(chunk, None)?;
        let out = no_grad(|| run_model(model, &batch, NormMode::Eval))?;
        p.outputs.extend_from_slice(&out.output.data());
        p.labels.extend_from_slice(&batch.labels.data());
        p.meta.extend_from_slice(&batch.meta.data());
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_meta_mlp;

    fn meta_corpus(n: usize) -> TensorSamples {
        let mut meta = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let view = (i % 2) as u8;
            meta.push(MetaFeatures::new((i % 7) as f32 / 6.0, ((i / 2) % 2) as u8, view).unwrap());
            let mut y = [0.0f32; NUM_LABELS];
            y[3] = view as f32;
            y[14] = 1.0 - view as f32;
            labels.extend_from_slice(&y);
        }
        TensorSamples::new(0, 0, Vec::new(), meta, labels).unwrap()
    }

    fn plan() -> TrainPlan {
        TrainPlan {
            batch_size: 8,
            max_epochs: 6,
            seed: 3,
            ..TrainPlan::default()
        }
    }

    #[test]
    fn same_seed_same_history() {
        let data = meta_corpus(40);
        let run = || {
            let mut m = build_meta_mlp(1);
            train(&mut m, &plan(), &data, &data).unwrap().history
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn selected_epoch_is_the_minimum() {
        let data = meta_corpus(40);
        let mut m = build_meta_mlp(1);
        let out = train(&mut m, &plan(), &data, &data).unwrap();
        let min = out.history.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_val_loss, min);
        let again = evaluate_loss(&m, &data, Objective::Bce, 32).unwrap();
        assert!((again - min).abs() < 1e-9);
    }

    #[test]
    fn empty_stream_is_usage_error() {
        let data = meta_corpus(4);
        let empty = data.subset(&[]);
        let mut m = build_meta_mlp(1);
        assert!(matches!(train(&mut m, &plan(), &empty, &data), Err(Error::Usage(_))));
    }

    struct PoisonAfter {
        inner: TensorSamples,
        clean_batches: std::sync::atomic::AtomicUsize,
    }

    impl Samples for PoisonAfter {
        fn len(&self) -> usize {
            self.inner.len()
        }
        fn batch(&self, indices: &[usize], augment: Option<u64>) -> Result<Batch> {
            let mut b = self.inner.batch(indices, augment)?;
            let left = self.clean_batches.load(std::sync::atomic::Ordering::SeqCst);
            if augment.is_some() {
                if left == 0 {
                    let mut m = b.meta.to_vec();
                    m[0] = f32::NAN;
                    b.meta = Tensor::new(b.meta.shape().to_vec(), m)?;
                } else {
                    self.clean_batches.store(left - 1, std::sync::atomic::Ordering::SeqCst);
                }
            }
            Ok(b)
        }
    }

    #[test]
    fn divergence_restores_best_parameters() {
        let data = meta_corpus(16);
        // Two clean epochs of two batches each, then a poisoned batch.
        let poisoned = PoisonAfter {
            inner: data.clone(),
            clean_batches: 4.into(),
        };
        let mut m = build_meta_mlp(1);
        let mut reference = build_meta_mlp(1);
        let short = TrainPlan { max_epochs: 2, ..plan() };
        let best = train(&mut reference, &short, &data, &data).unwrap();
        match train(&mut m, &plan(), &poisoned, &data) {
            Err(Error::Diverged { epoch, .. }) => assert_eq!(epoch, 3),
            other => panic!("{other:?}"),
        }
        assert_eq!(m.params().snapshot(), reference.params().snapshot());
        assert!(best.best_epoch <= 2);
    }

    #[test]
    fn history_csv_header() {
        let h = History {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                val_loss: 0.25,
                lr: 0.01,
            }],
        };
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,train_loss,val_loss,lr\n1,0.50000000,0.25000000,1e-2"));
    }
}
