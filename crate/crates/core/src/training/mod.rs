//! Optimizers, augmentation, metrics and the two-phase training loop.
//!
//! Phase 1 trains on augmented samples, phase 2 fine-tunes on undistorted
//! ones starting from the best phase-1 weights. Each phase stops early once
//! the validation loss has not improved for `patience` epochs.
//!
//! Randomness comes from named streams of the run seed: `order/phase{p}/epoch{e}`
//! shuffles the training set and `augment/phase{p}/epoch{e}/{k}` distorts the
//! `k`-th sample of that epoch, so resuming needs no generator state.
//!
//! With an output directory, training writes
//!
//! ```text
//! report.jsonl   one record per epoch
//! summary.json   phase boundaries, best epoch and final metrics
//! best.ckpt      best-validation weights
//! state.bin      everything needed to resume
//! ```

pub mod augment;
pub mod metrics;
pub mod optim;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::checkpoint::{decode_archive, encode_archive, write_atomic};
use crate::data::{save_checkpoint, Sample, Target};
use crate::error::{Error, Result};
use crate::hourglass::{Head, Network};
use crate::ops::{self, LabelMap};
use crate::real::Real;
use crate::rng::RngState;
use crate::tensor::Tensor;

pub use augment::{augment, AugmentationSpec, ElasticSpec, Transform};
pub use metrics::{
    argmax_labels, counting_mae, evaluate_counting, evaluate_segmentation, predicted_counts, segmentation_metrics,
    SegmentationMetrics,
};
pub use optim::{adam_step, OptimizerConfig, OptimizerKind, OptimizerState};

const STATE_MAGIC: &[u8; 4] = b"CTXS";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
}

fn default_patience() -> usize {
    10
}

fn default_batch() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSpec {
    /// Augmented phase.
    pub phase1: PhaseSpec,
    /// Fine-tuning phase on undistorted samples.
    pub phase2: PhaseSpec,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub augmentation: AugmentationSpec,
}

impl TrainSpec {
    pub fn new(phase1: PhaseSpec, phase2: PhaseSpec, batch_size: usize) -> Self {
        TrainSpec { phase1, phase2, batch_size, augmentation: AugmentationSpec::default() }
    }

    fn phase(&self, p: usize) -> &PhaseSpec {
        if p == 0 {
            &self.phase1
        } else {
            &self.phase2
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.phase1.patience == 0 || self.phase2.patience == 0 {
            return Err(Error::config("patience must be at least 1"));
        }
        if let Some(e) = &self.augmentation.elastic {
            if e.grid_spacing == 0 || !(e.sigma >= 0.0) {
                return Err(Error::config("elastic grid_spacing must be positive and sigma non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    /// Continue from `state.bin` in `out_dir` when present.
    pub resume: bool,
    /// Stop (as if interrupted) once this many epochs have completed.
    pub halt_after: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Validation pixel accuracy (segmentation) or MAE (counting).
    pub metric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub metric: String,
    pub epochs: Vec<EpochRecord>,
    /// Number of epochs completed when each phase stopped.
    pub phase_end: [usize; 2],
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// File name of the best checkpoint, relative to the output directory.
    pub best_checkpoint: Option<PathBuf>,
    /// Metrics of the returned (best) network.
    pub final_train_metric: f64,
    pub final_val_metric: f64,
    pub completed: bool,
}

fn metric_name(head: Head) -> &'static str {
    match head {
        Head::SoftmaxSegmentation => "pixel_accuracy",
        Head::LinearDensity => "mae",
    }
}

fn check_targets<T: Real>(head: Head, samples: &[Sample<T>]) -> Result<()> {
    for s in samples {
        let ok = matches!(
            (head, &s.target),
            (Head::SoftmaxSegmentation, Target::Labels(_)) | (Head::LinearDensity, Target::Density(_))
        );
        if !ok {
            return Err(Error::config(format!("sample {} does not match the {head:?} head", s.id)));
        }
    }
    Ok(())
}

// Density losses are measured in the head's scaled units.
fn sample_loss<T: Real>(head: Head, scale: f64, out: &Tensor<T>, sample: &Sample<T>) -> Result<T> {
    match (&sample.target, head) {
        (Target::Labels(l), Head::SoftmaxSegmentation) => ops::softmax_cross_entropy(out, l),
        (Target::Density(d), Head::LinearDensity) => Ok(ops::mse_loss(out, d)? * T::from_f64_lossy(scale * scale)),
        _ => Err(Error::config("target does not match head")),
    }
}

/// Mean loss and metric of `net` over `samples`.
pub fn loss_and_metric<T: Real>(net: &Network<T>, samples: &[Sample<T>]) -> Result<(f64, f64)> {
    let head = net.config().head;
    check_targets(head, samples)?;
    if samples.is_empty() {
        return Err(Error::config("no samples to evaluate"));
    }
    let outs = samples
        .par_iter()
        .map(|s| {
            let out = net.predict(&s.image)?;
            let loss = sample_loss(head, net.config().loss_scale(), &out, s)?.to_f64_lossy();
            Ok((loss, out))
        })
        .collect::<Result<Vec<_>>>()?;
    let loss = outs.iter().map(|(l, _)| l).sum::<f64>() / samples.len() as f64;
    let metric = match head {
        Head::SoftmaxSegmentation => {
            let preds: Vec<LabelMap> = outs.iter().map(|(_, o)| argmax_labels(o)).collect();
            let truth: Vec<LabelMap> = samples.iter().map(|s| s.labels().expect("checked").clone()).collect();
            segmentation_metrics(&preds, &truth)?.pixel_accuracy
        }
        Head::LinearDensity => {
            let pred: Vec<f64> = outs.iter().map(|(_, o)| o.data().iter().map(|v| v.to_f64_lossy()).sum()).collect();
            let truth: Vec<f64> = samples
                .iter()
                .map(|s| s.density().expect("checked").data().iter().map(|v| v.to_f64_lossy()).sum())
                .collect();
            counting_mae(&pred, &truth)?
        }
    };
    Ok((loss, metric))
}

/// Forward and backward pass over one batch. Returns the loss and the
/// gradient of every parameter.
pub fn batch_gradients<T: Real>(net: &Network<T>, batch: &[Sample<T>]) -> Result<(f64, Vec<Tensor<T>>)> {
    let mut tape = Tape::new();
    let params = net.bind(&mut tape);
    let images: Vec<Tensor<T>> = batch.iter().map(|s| s.image.clone()).collect();
    let x = tape.leaf(Tensor::stack(&images)?);
    let out = net.forward(&mut tape, &params, x)?;
    let loss = match net.config().head {
        Head::SoftmaxSegmentation => {
            check_targets(Head::SoftmaxSegmentation, batch)?;
            let maps: Vec<&LabelMap> = batch.iter().map(|s| s.labels().expect("checked")).collect();
            tape.softmax_cross_entropy(out, &LabelMap::stack(&maps)?)?
        }
        Head::LinearDensity => {
            check_targets(Head::LinearDensity, batch)?;
            let maps: Vec<Tensor<T>> = batch.iter().map(|s| s.density().expect("checked").clone()).collect();
            let target = tape.leaf(Tensor::stack(&maps)?);
            let mse = tape.mse_loss(out, target)?;
            let scale = net.config().loss_scale();
            tape.scale(mse, T::from_f64_lossy(scale * scale))
        }
    };
    let value = tape.value(loss).data()[0].to_f64_lossy();
    if !value.is_finite() {
        return Err(Error::Numerical(format!("training loss became {value}")));
    }
    tape.backward(loss)?;
    Ok((value, params.iter().map(|&p| tape.grad_or_zeros(p)).collect()))
}

// Resumable progress. Floats are kept as bit patterns so a resumed run
// compares against exactly the same values.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct Progress {
    fingerprint: String,
    phase: usize,
    phase_epoch: usize,
    epoch: usize,
    phase_best: u64,
    bad_epochs: usize,
    best_val: u64,
    best_epoch: usize,
    phase_end: [usize; 2],
    optimizer_step: u64,
    records: Vec<(usize, usize, [u64; 3])>,
}

impl Progress {
    fn fresh(fingerprint: String) -> Self {
        Progress {
            fingerprint,
            phase: 0,
            phase_epoch: 0,
            epoch: 0,
            phase_best: f64::INFINITY.to_bits(),
            bad_epochs: 0,
            best_val: f64::INFINITY.to_bits(),
            best_epoch: 0,
            phase_end: [0, 0],
            optimizer_step: 0,
            records: Vec::new(),
        }
    }

    fn records(&self) -> Vec<EpochRecord> {
        self.records
            .iter()
            .map(|&(epoch, phase, [t, v, m])| EpochRecord {
                epoch,
                phase,
                train_loss: f64::from_bits(t),
                val_loss: f64::from_bits(v),
                metric: f64::from_bits(m),
            })
            .collect()
    }
}

struct Run<'a, T> {
    net: &'a mut Network<T>,
    state: OptimizerState<T>,
    best: Vec<Tensor<T>>,
    progress: Progress,
}

fn save_state<T: Real>(dir: &Path, run: &Run<T>) -> Result<()> {
    let header = serde_json::to_string(&run.progress).expect("progress serializes");
    let names: Vec<String> =
        run.net.params().iter().flat_map(|p| ["param", "m", "v", "best"].map(|k| format!("{k}.{}", p.name))).collect();
    let mut tensors = Vec::new();
    for (i, p) in run.net.params().iter().enumerate() {
        for (j, t) in [&p.value, &run.state.first[i], &run.state.second[i], &run.best[i]].into_iter().enumerate() {
            tensors.push((names[4 * i + j].as_str(), t));
        }
    }
    write_atomic(&dir.join("state.bin"), &encode_archive(STATE_MAGIC, &header, &tensors))
}

fn load_state<T: Real>(path: &Path, run: &mut Run<T>) -> Result<()> {
    let bytes = fs::read(path)?;
    let (header, offset, tensors) = decode_archive(STATE_MAGIC, &bytes)?;
    let progress: Progress =
        serde_json::from_str(&header).map_err(|e| Error::Format { offset, message: e.to_string() })?;
    if progress.fingerprint != run.progress.fingerprint {
        return Err(Error::config(format!("{} was written by a different configuration", path.display())));
    }
    let mut named: std::collections::HashMap<String, Tensor<f32>> = tensors.into_iter().collect();
    for (i, p) in run.net.params_mut().iter_mut().enumerate() {
        let (name, shape) = (p.name.clone(), p.value.shape());
        let mut take = |kind: &str| {
            named
                .remove(&format!("{kind}.{name}"))
                .filter(|t| t.shape() == shape)
                .map(|t| t.cast::<T>())
                .ok_or_else(|| Error::Format { offset, message: format!("state lacks {kind}.{name}") })
        };
        p.value = take("param")?;
        run.state.first[i] = take("m")?;
        run.state.second[i] = take("v")?;
        run.best[i] = take("best")?;
    }
    run.state.step = progress.optimizer_step;
    run.progress = progress;
    Ok(())
}

fn write_report(dir: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text += &serde_json::to_string(r).expect("record serializes");
        text.push('\n');
    }
    write_atomic(&dir.join("report.jsonl"), text.as_bytes())
}

/// Two-phase training with early stopping. On return `net` holds the
/// best-validation weights.
pub fn train<T: Real>(
    net: &mut Network<T>,
    train_set: &[Sample<T>],
    val_set: &[Sample<T>],
    spec: &TrainSpec,
    optimizer: &OptimizerConfig,
    options: &TrainOptions,
) -> Result<TrainingReport> {
    spec.validate()?;
    optimizer.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::config(format!(
            "training needs non-empty train and validation splits (got {} and {})",
            train_set.len(),
            val_set.len()
        )));
    }
    let head = net.config().head;
    check_targets(head, train_set)?;
    check_targets(head, val_set)?;
    for s in train_set.iter().chain(val_set) {
        net.config().check_input(s.image.shape())?;
    }

    let fingerprint =
        serde_json::to_string(&(spec, optimizer, options.seed, net.config(), net.kind())).expect("serializes");
    let best = net.params().iter().map(|p| p.value.clone()).collect();
    let mut run = Run { state: OptimizerState::new(net.params()), net, best, progress: Progress::fresh(fingerprint) };
    if let Some(dir) = &options.out_dir {
        fs::create_dir_all(dir)?;
        let path = dir.join("state.bin");
        if options.resume && path.exists() {
            load_state(&path, &mut run)?;
        }
    }

    let root = RngState::new(options.seed);
    let mut completed = true;
    while run.progress.phase < 2 {
        let p = &run.progress;
        let phase = spec.phase(p.phase);
        if p.phase_epoch >= phase.max_epochs || (p.phase_epoch > 0 && p.bad_epochs >= phase.patience) {
            let p = &mut run.progress;
            p.phase_end[p.phase] = p.epoch;
            p.phase += 1;
            p.phase_epoch = 0;
            p.bad_epochs = 0;
            p.phase_best = f64::INFINITY.to_bits();
            if p.best_epoch > 0 {
                for (param, b) in run.net.params_mut().iter_mut().zip(&run.best) {
                    param.value = b.clone();
                }
            }
            continue;
        }
        if options.halt_after.is_some_and(|h| p.epoch >= h) {
            completed = false;
            break;
        }
        run_epoch(&mut run, train_set, val_set, spec, optimizer, &root, options.out_dir.as_deref())?;
    }

    for (param, b) in run.net.params_mut().iter_mut().zip(&run.best) {
        param.value = b.clone();
    }
    let records = run.progress.records();
    let final_train_metric = if completed { loss_and_metric(run.net, train_set)?.1 } else { f64::NAN };
    let final_val_metric = if completed { loss_and_metric(run.net, val_set)?.1 } else { f64::NAN };
    let report = TrainingReport {
        metric: metric_name(head).to_owned(),
        phase_end: run.progress.phase_end,
        best_epoch: run.progress.best_epoch,
        best_val_loss: f64::from_bits(run.progress.best_val),
        best_checkpoint: options.out_dir.as_ref().map(|_| PathBuf::from("best.ckpt")),
        epochs: records,
        final_train_metric,
        final_val_metric,
        completed,
    };
    if let (Some(dir), true) = (&options.out_dir, completed) {
        let mut summary = serde_json::to_value(&report).expect("report serializes");
        summary.as_object_mut().expect("object").remove("epochs");
        let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
        write_atomic(&dir.join("summary.json"), text.as_bytes())?;
    }
    Ok(report)
}

fn run_epoch<T: Real>(
    run: &mut Run<T>,
    train_set: &[Sample<T>],
    val_set: &[Sample<T>],
    spec: &TrainSpec,
    optimizer: &OptimizerConfig,
    root: &RngState,
    out_dir: Option<&Path>,
) -> Result<()> {
    let phase = run.progress.phase;
    let tag = format!("phase{}/epoch{}", phase + 1, run.progress.phase_epoch + 1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    root.substream("order").substream(&tag).shuffle(&mut order);
    let augmenting = phase == 0 && !spec.augmentation.is_identity();
    let aug_root = root.substream("augment").substream(&tag);

    let mut total = 0.0;
    for (b, chunk) in order.chunks(spec.batch_size).enumerate() {
        let batch: Vec<Sample<T>> = chunk
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                if augmenting {
                    let mut rng = aug_root.substream(&(b * spec.batch_size + k).to_string());
                    augment(&train_set[i], &spec.augmentation, &mut rng)
                } else {
                    train_set[i].clone()
                }
            })
            .collect();
        let (loss, grads) = batch_gradients(run.net, &batch)?;
        adam_step(run.net.params_mut(), &grads, &mut run.state, optimizer)?;
        total += loss * chunk.len() as f64;
    }
    let train_loss = total / train_set.len() as f64;
    let (val_loss, metric) = loss_and_metric(run.net, val_set)?;
    if !val_loss.is_finite() {
        return Err(Error::Numerical(format!("validation loss became {val_loss}")));
    }

    let p = &mut run.progress;
    p.epoch += 1;
    p.phase_epoch += 1;
    p.optimizer_step = run.state.step;
    p.records.push((p.epoch, phase + 1, [train_loss.to_bits(), val_loss.to_bits(), metric.to_bits()]));
    if val_loss < f64::from_bits(p.phase_best) {
        p.phase_best = val_loss.to_bits();
        p.bad_epochs = 0;
    } else {
        p.bad_epochs += 1;
    }
    let improved = val_loss < f64::from_bits(p.best_val);
    if improved {
        p.best_val = val_loss.to_bits();
        p.best_epoch = p.epoch;
        for (b, param) in run.best.iter_mut().zip(run.net.params()) {
            *b = param.value.clone();
        }
    }
    if let Some(dir) = out_dir {
        if improved {
            save_checkpoint(run.net, &dir.join("best.ckpt"))?;
        }
        write_report(dir, &run.progress.records())?;
        save_state(dir, run)?;
    }
    Ok(())
}
