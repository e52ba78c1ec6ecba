//! AMSGrad and the training regimes: supervised, DIM pretraining (with the
//! optional Z-classifier term) and probes on frozen features.

mod metrics;
mod optim;
mod select;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use metrics::{read_metrics, EpochMetrics, JsonlSink, MetricsSink, NullSink};
pub use optim::{amsgrad_update, AmsGrad, Moments, BETA1, BETA2, EPSILON};
pub use select::{select_checkpoint, Checkpoint, OnlineSelector, Selection};

use crate::autodiff::{Mode, Tape};
use crate::data::{batch_iter, Dataset};
use crate::dim::{l1_penalty, l1_value, local_dim_loss, Estimator, StatisticsNetworks};
use crate::encoders::{build_probe, ClassifierHead, Encoder, ForwardOptions, ParamStore, Tap};
use crate::error::{Error, Result};
use crate::evaluation::balanced_accuracy;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Samples per forward pass when only evaluating.
pub const EVAL_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub drop_last: bool,
    pub epochs: usize,
    pub lambda_l1: f64,
    pub ss_weight: f64,
    pub burn_in_epochs: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn supervised() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 8,
            drop_last: true,
            epochs: 500,
            lambda_l1: 0.0,
            ss_weight: 1.0,
            burn_in_epochs: 50,
            seed: 0,
        }
    }

    pub fn dim() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 1000,
            ..Self::supervised()
        }
    }

    pub fn probe() -> Self {
        Self {
            epochs: 1000,
            ..Self::supervised()
        }
    }

    pub fn validate(&self, min_batch: usize) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size < min_batch {
            return Err(Error::invalid(format!(
                "batch size must be ≥ {min_batch}, got {}",
                self.batch_size
            )));
        }
        if [self.lambda_l1, self.ss_weight].iter().any(|w| w.is_nan() || *w < 0.0) {
            return Err(Error::invalid("L1 and SS weights must be ≥ 0"));
        }
        Ok(())
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(0x5eed))
    }
}

fn at_epoch(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::Diverged { epoch },
        other => other,
    }
}

fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|row| (0..k).fold(0, |best, j| if row[j] > row[best] { j } else { best }))
        .collect()
}

/// Mean loss and balanced accuracy of a classifier over logits.
fn score<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let x = tape.constant(logits.clone());
    let ce = tape.cross_entropy(x, labels)?;
    let loss = tape.value(ce).item()?.as_f64();
    let k = logits.shape()[1];
    Ok((loss, balanced_accuracy(labels, &argmax_rows(logits), k)?))
}

/// Eval-mode encoder outputs of `indices`, `[n, outputs]`.
pub fn encoder_outputs<T: Scalar>(encoder: &mut Encoder<T>, data: &Dataset<T>, indices: &[usize]) -> Result<Tensor<T>> {
    tap_features(encoder, data, indices, Tap::Z)
}

/// Eval-mode features of `indices` at `tap`, flattened to `[n, F]`.
pub fn tap_features<T: Scalar>(
    encoder: &mut Encoder<T>,
    data: &Dataset<T>,
    indices: &[usize],
    tap: Tap,
) -> Result<Tensor<T>> {
    if indices.is_empty() {
        return Err(Error::Empty("feature indices"));
    }
    let parts = indices
        .chunks(EVAL_CHUNK)
        .map(|chunk| encoder.features(&data.batch(chunk)?, tap))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack_outer(&parts.iter().collect::<Vec<_>>())
}

/// Loss and balanced accuracy of a classification encoder on `indices`.
pub fn evaluate_classifier<T: Scalar>(
    encoder: &mut Encoder<T>,
    data: &Dataset<T>,
    indices: &[usize],
) -> Result<(f64, f64)> {
    let logits = encoder_outputs(encoder, data, indices)?;
    score(&logits, &data.labels_of(indices))
}

/// Eval-mode probe logits over precomputed features.
pub fn probe_logits<T: Scalar>(head: &ClassifierHead, params: &ParamStore<T>, features: &Tensor<T>) -> Result<Tensor<T>> {
    let mut store = params.clone();
    let mut tape = Tape::new();
    let x = tape.constant(features.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = head.forward(&mut tape, &mut store, x, Mode::Eval, &mut rng)?;
    Ok(tape.value(out).clone())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub history: Vec<Checkpoint>,
    pub selection: Option<Selection>,
    /// parameters at the selected checkpoint (initial ones if no epoch ran)
    pub selected: ParamStore<T>,
}

fn labels_for(labels: &[usize], idx: &[usize]) -> Vec<usize> {
    idx.iter().map(|&i| labels[i]).collect()
}

/// Cross-entropy training of a classification preset. Each epoch logs a
/// `train` and a `val` line; `encoder` ends with the final parameters.
pub fn train_supervised<T: Scalar>(
    encoder: &mut Encoder<T>,
    data: &Dataset<T>,
    train: &[usize],
    val: &[usize],
    cfg: &TrainConfig,
    sink: &mut dyn MetricsSink,
) -> Result<TrainOutcome<T>> {
    cfg.validate(2)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Empty("training or validation split"));
    }
    let labels = data.labels();
    let mut opt = AmsGrad::new(cfg.learning_rate)?;
    let mut rng = cfg.rng();
    let mut selector = OnlineSelector::new(cfg.burn_in_epochs);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let err = at_epoch(epoch);
        let mut losses = Vec::new();
        for batch in batch_iter(train, cfg.batch_size, cfg.drop_last, cfg.seed, epoch) {
            if batch.len() < 2 {
                continue;
            }
            let x = data.augmented_batch(&batch, &mut rng)?;
            let mut tape = Tape::new();
            let x = tape.constant(x);
            let out = encoder.forward(&mut tape, x, ForwardOptions::train()).map_err(&err)?;
            let mut loss = tape.cross_entropy(out.output, &labels_for(&labels, &batch)).map_err(&err)?;
            if cfg.lambda_l1 > 0.0 {
                let l1 = l1_penalty(&mut tape, cfg.lambda_l1).map_err(&err)?;
                loss = tape.add(loss, l1).map_err(&err)?;
            }
            losses.push(tape.value(loss).item()?.as_f64());
            let grads = tape.backward(loss)?;
            opt.step(&mut [&mut encoder.params], &grads, &tape)?;
        }
        let (_, train_ba) = evaluate_classifier(encoder, data, train).map_err(&err)?;
        let (val_loss, val_ba) = evaluate_classifier(encoder, data, val).map_err(&err)?;
        let wall_ms = Some(start.elapsed().as_millis() as u64);
        let l1 = l1_value(&[&encoder.params], cfg.lambda_l1);
        let mut line = EpochMetrics::new(epoch, "train");
        line.loss = (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64);
        line.balanced_accuracy = Some(train_ba);
        line.l1 = Some(l1);
        line.wall_ms = wall_ms;
        sink.record(&line)?;
        let mut line = EpochMetrics::new(epoch, "val");
        line.loss = Some(val_loss);
        line.balanced_accuracy = Some(val_ba);
        line.wall_ms = wall_ms;
        sink.record(&line)?;

        let c = Checkpoint {
            epoch,
            train_metric: train_ba,
            val_metric: val_ba,
        };
        history.push(c);
        selector.observe(c, || encoder.params.clone());
    }
    let (selection, selected) = match selector.finish() {
        Some((s, p)) => (Some(s), p),
        None => (None, encoder.params.clone()),
    };
    Ok(TrainOutcome {
        history,
        selection,
        selected,
    })
}

#[derive(Debug, Clone)]
pub struct DimOutcome<T> {
    /// objective of every optimization step, in order
    pub step_objectives: Vec<f64>,
    /// mean step objective of every epoch
    pub epoch_objectives: Vec<f64>,
    pub best_epoch: Option<usize>,
    /// encoder and statistics-network parameters at `best_epoch`
    pub best: Option<(ParamStore<T>, ParamStore<T>)>,
    pub z_head: Option<(ClassifierHead, ParamStore<T>)>,
}

/// Maximizes the local DIM objective of `estimator` over `indices`.
///
/// With `ss_classes`, a Z-classifier is trained jointly and its
/// cross-entropy, weighted by `cfg.ss_weight`, is added to the loss.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_dim<T: Scalar>(
    encoder: &mut Encoder<T>,
    nets: &mut StatisticsNetworks<T>,
    data: &Dataset<T>,
    indices: &[usize],
    cfg: &TrainConfig,
    estimator: Estimator,
    ss_classes: Option<usize>,
    sink: &mut dyn MetricsSink,
) -> Result<DimOutcome<T>> {
    cfg.validate(2)?;
    if indices.len() < 2 {
        return Err(Error::Empty("pretraining set"));
    }
    let labels = data.labels();
    let mut opt = AmsGrad::new(cfg.learning_rate)?;
    let mut rng = cfg.rng();
    let mut z_head = match ss_classes {
        Some(k) => {
            let head = ClassifierHead::new("zhead", encoder.spec.output_dim(), k);
            let params = head.init_params(&mut rng);
            Some((head, params))
        }
        None => None,
    };
    let mut out = DimOutcome {
        step_objectives: Vec::new(),
        epoch_objectives: Vec::with_capacity(cfg.epochs),
        best_epoch: None,
        best: None,
        z_head: None,
    };
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let err = at_epoch(epoch);
        let (mut objectives, mut losses) = (Vec::new(), Vec::new());
        for batch in batch_iter(indices, cfg.batch_size, cfg.drop_last, cfg.seed, epoch) {
            if batch.len() < 2 {
                continue;
            }
            let x = data.augmented_batch(&batch, &mut rng)?;
            let mut tape = Tape::new();
            let x = tape.constant(x);
            let step = local_dim_loss(&mut tape, encoder, nets, x, estimator, ForwardOptions::train()).map_err(&err)?;
            let mut loss = step.loss;
            if let Some((head, params)) = z_head.as_mut() {
                let logits = head.forward(&mut tape, params, step.encoder.output, Mode::Train, &mut rng).map_err(&err)?;
                let ce = tape.cross_entropy(logits, &labels_for(&labels, &batch)).map_err(&err)?;
                let ce = tape.scale(ce, cfg.ss_weight).map_err(&err)?;
                loss = tape.add(loss, ce).map_err(&err)?;
            }
            if cfg.lambda_l1 > 0.0 {
                let l1 = l1_penalty(&mut tape, cfg.lambda_l1).map_err(&err)?;
                loss = tape.add(loss, l1).map_err(&err)?;
            }
            objectives.push(tape.value(step.objective).item()?.as_f64());
            losses.push(tape.value(loss).item()?.as_f64());
            let grads = tape.backward(loss)?;
            match z_head.as_mut() {
                Some((_, head)) => opt.step(&mut [&mut encoder.params, &mut nets.params, head], &grads, &tape)?,
                None => opt.step(&mut [&mut encoder.params, &mut nets.params], &grads, &tape)?,
            }
        }
        if objectives.is_empty() {
            return Err(Error::invalid("no full batch in the pretraining set"));
        }
        let mean_obj = objectives.iter().sum::<f64>() / objectives.len() as f64;
        let mut line = EpochMetrics::new(epoch, "train");
        line.loss = Some(losses.iter().sum::<f64>() / losses.len() as f64);
        line.objective = Some(mean_obj);
        let mut stores = vec![&encoder.params, &nets.params];
        if let Some((_, p)) = z_head.as_ref() {
            stores.push(p);
        }
        line.l1 = Some(l1_value(&stores, cfg.lambda_l1));
        line.wall_ms = Some(start.elapsed().as_millis() as u64);
        sink.record(&line)?;

        out.step_objectives.extend(objectives);
        if out.epoch_objectives.iter().all(|&o| mean_obj > o) {
            out.best_epoch = Some(epoch);
            out.best = Some((encoder.params.clone(), nets.params.clone()));
        }
        out.epoch_objectives.push(mean_obj);
    }
    out.z_head = z_head;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ProbeOutcome<T> {
    pub head: ClassifierHead,
    pub training: TrainOutcome<T>,
    /// head parameters after the last epoch
    pub final_params: ParamStore<T>,
}

/// Trains a probe on eval-mode features of the frozen `encoder`; encoder
/// parameters are only read.
#[allow(clippy::too_many_arguments)]
pub fn train_probe<T: Scalar>(
    encoder: &mut Encoder<T>,
    tap: Tap,
    num_classes: usize,
    data: &Dataset<T>,
    train: &[usize],
    val: &[usize],
    cfg: &TrainConfig,
    sink: &mut dyn MetricsSink,
) -> Result<ProbeOutcome<T>> {
    cfg.validate(2)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Empty("training or validation split"));
    }
    let head = build_probe(&encoder.spec, tap, num_classes)?;
    let train_x = tap_features(encoder, data, train, tap)?;
    let val_x = tap_features(encoder, data, val, tap)?;
    let (train_y, val_y) = (data.labels_of(train), data.labels_of(val));
    train_head(&head, &train_x, &train_y, &val_x, &val_y, cfg, sink)
}

/// Probe training loop over precomputed `[n, F]` features.
pub fn train_head<T: Scalar>(
    head: &ClassifierHead,
    train_x: &Tensor<T>,
    train_y: &[usize],
    val_x: &Tensor<T>,
    val_y: &[usize],
    cfg: &TrainConfig,
    sink: &mut dyn MetricsSink,
) -> Result<ProbeOutcome<T>> {
    cfg.validate(2)?;
    let mut rng = cfg.rng();
    let mut params: ParamStore<T> = head.init_params(&mut rng);
    let mut opt = AmsGrad::new(cfg.learning_rate)?;
    let mut selector = OnlineSelector::new(cfg.burn_in_epochs);
    let mut history = Vec::with_capacity(cfg.epochs);
    let positions: Vec<usize> = (0..train_y.len()).collect();
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let err = at_epoch(epoch);
        let mut losses = Vec::new();
        for batch in batch_iter(&positions, cfg.batch_size, cfg.drop_last, cfg.seed, epoch) {
            if batch.len() < 2 {
                continue;
            }
            let rows = batch
                .iter()
                .map(|&i| train_x.slice_outer(i))
                .collect::<Result<Vec<_>>>()?;
            let x = Tensor::stack_outer(&rows.iter().collect::<Vec<_>>())?;
            let mut tape = Tape::new();
            let x = tape.constant(x);
            let logits = head.forward(&mut tape, &mut params, x, Mode::Train, &mut rng).map_err(&err)?;
            let mut loss = tape.cross_entropy(logits, &labels_for(train_y, &batch)).map_err(&err)?;
            if cfg.lambda_l1 > 0.0 {
                let l1 = l1_penalty(&mut tape, cfg.lambda_l1).map_err(&err)?;
                loss = tape.add(loss, l1).map_err(&err)?;
            }
            losses.push(tape.value(loss).item()?.as_f64());
            let grads = tape.backward(loss)?;
            opt.step(&mut [&mut params], &grads, &tape)?;
        }
        let (_, train_ba) = score(&probe_logits(head, &params, train_x).map_err(&err)?, train_y)?;
        let (val_loss, val_ba) = score(&probe_logits(head, &params, val_x).map_err(&err)?, val_y)?;
        let wall_ms = Some(start.elapsed().as_millis() as u64);
        let mut line = EpochMetrics::new(epoch, "train");
        line.loss = (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64);
        line.balanced_accuracy = Some(train_ba);
        line.l1 = Some(l1_value(&[&params], cfg.lambda_l1));
        line.wall_ms = wall_ms;
        sink.record(&line)?;
        let mut line = EpochMetrics::new(epoch, "val");
        line.loss = Some(val_loss);
        line.balanced_accuracy = Some(val_ba);
        line.wall_ms = wall_ms;
        sink.record(&line)?;

        let c = Checkpoint {
            epoch,
            train_metric: train_ba,
            val_metric: val_ba,
        };
        history.push(c);
        selector.observe(c, || params.clone());
    }
    let (selection, selected) = match selector.finish() {
        Some((s, p)) => (Some(s), p),
        None => (None, params.clone()),
    };
    Ok(ProbeOutcome {
        head: head.clone(),
        training: TrainOutcome {
            history,
            selection,
            selected,
        },
        final_params: params,
    })
}

/// Balanced accuracy of a probe on `indices`.
pub fn evaluate_probe<T: Scalar>(
    encoder: &mut Encoder<T>,
    tap: Tap,
    head: &ClassifierHead,
    params: &ParamStore<T>,
    data: &Dataset<T>,
    indices: &[usize],
) -> Result<(f64, f64)> {
    let x = tap_features(encoder, data, indices, tap)?;
    score(&probe_logits(head, params, &x)?, &data.labels_of(indices))
}

