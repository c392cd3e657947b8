//! Training loops for the classifier and the one-image colorization run.
//!
//! Metric rows carry `seconds = 0` unless timing is requested, so that runs
//! with the same seed produce byte-identical CSV files.

use std::time::Instant;

use crate::autodiff::Adam;
use crate::data::{metrics, Cifar10Set, MetricRow};
use crate::error::{Error, Result};
use crate::models::{cae_pair, cae_rgb, Model, ModelKind, Target};
use crate::tensor::{SeededRng, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub epochs: u32,
    pub lr: f64,
    pub batch_size: usize,
    /// Record wall time in the `seconds` column.
    pub timing: bool,
}

struct Clock {
    start: Instant,
    enabled: bool,
}

impl Clock {
    fn new(enabled: bool) -> Self {
        Clock {
            start: Instant::now(),
            enabled,
        }
    }

    fn seconds(&self) -> f64 {
        if self.enabled {
            self.start.elapsed().as_secs_f64()
        } else {
            0.0
        }
    }
}

/// Mean cross-entropy and accuracy over a set, in batches of `batch`.
pub fn evaluate_classifier(model: &Model, set: &Cifar10Set, batch: usize) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let (x, labels) = set.batch(chunk);
        let logits = model.infer(&x)?;
        let k = logits.dims()[1];
        for (row, &y) in logits.data().chunks(k).zip(&labels) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
            if argmax(row) == y {
                correct += 1;
            }
        }
    }
    Ok((loss / set.len() as f64, correct as f64 / set.len() as f64))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Adam training with per-epoch shuffling from `rng`. Emits a `test` row for
/// epoch 0 before any update, then a `train` and a `test` row per epoch.
pub fn train_classifier(
    model: &mut Model,
    train: &Cifar10Set,
    test: &Cifar10Set,
    opts: &TrainOptions,
    rng: &mut SeededRng,
) -> Result<Vec<MetricRow>> {
    if model.kind != ModelKind::Classifier {
        return Err(Error::InvalidArgument("train_classifier needs a classifier".into()));
    }
    if train.is_empty() || opts.batch_size == 0 {
        return Err(Error::InvalidArgument("empty training set or zero batch size".into()));
    }
    let clock = Clock::new(opts.timing);
    let eval_batch = 100;
    let mut rows = Vec::new();
    let (loss0, acc0) = evaluate_classifier(model, test, eval_batch)?;
    rows.push(row(0, "test", loss0, acc0, None, clock.seconds()));
    let mut opt = Adam::new(opts.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=opts.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(opts.batch_size) {
            let (x, labels) = train.batch(chunk);
            let (loss, logits) = model.train_step(&x, Target::Labels(&labels), &mut opt)?;
            loss_sum += loss * chunk.len() as f64;
            let k = logits.dims()[1];
            correct += logits.data().chunks(k).zip(&labels).filter(|(r, &y)| argmax(r) == y).count();
        }
        let n = train.len() as f64;
        rows.push(row(epoch, "train", loss_sum / n, correct as f64 / n, None, clock.seconds()));
        let (l, a) = evaluate_classifier(model, test, eval_batch)?;
        rows.push(row(epoch, "test", l, a, None, clock.seconds()));
    }
    Ok(rows)
}

fn row(epoch: u32, split: &str, loss: f64, metric1: f64, metric2: Option<f64>, seconds: f64) -> MetricRow {
    MetricRow {
        epoch,
        split: split.into(),
        loss,
        metric1,
        metric2,
        seconds,
    }
}

#[derive(Clone, Debug)]
pub struct CaeOutcome {
    pub rows: Vec<MetricRow>,
    /// Final reconstruction as `[3, H, W]`, clamped to `[0, 1]`.
    pub reconstruction: Tensor,
    pub psnr: f64,
    pub ssim: f64,
    /// Quality of the gray image itself (replicated to RGB) against the
    /// color original.
    pub gray_psnr: f64,
    pub gray_ssim: f64,
}

fn clamp01(t: &Tensor) -> Tensor {
    t.map(|v| v.clamp(0.0, 1.0))
}

/// Full-batch Adam on one image: the gray version is the input, the color
/// original the target. Logs every `log_every` epochs and at the last one;
/// `metric1` is PSNR and `metric2` SSIM of the RGB reconstruction.
pub fn train_cae(model: &mut Model, rgb: &Tensor, opts: &TrainOptions, log_every: u32) -> Result<CaeOutcome> {
    if model.kind != ModelKind::Autoencoder {
        return Err(Error::InvalidArgument("train_cae needs an autoencoder".into()));
    }
    let clock = Clock::new(opts.timing);
    let (x, y) = cae_pair(rgb, model.input_channels())?;
    let gray_rgb = cae_rgb(&x)?;
    let gray_psnr = metrics::psnr(&gray_rgb, rgb, 1.0)?;
    let gray_ssim = metrics::ssim(&gray_rgb, rgb, 1.0)?;
    let quality = |out: &Tensor| -> Result<(Tensor, f64, f64)> {
        let recon = clamp01(&cae_rgb(out)?);
        let p = metrics::psnr(&recon, rgb, 1.0)?;
        let s = metrics::ssim(&recon, rgb, 1.0)?;
        Ok((recon, p, s))
    };
    let mut rows = Vec::new();
    let mut opt = Adam::new(opts.lr);
    let log_every = log_every.max(1);
    for epoch in 0..opts.epochs {
        let (loss, out) = model.train_step(&x, Target::Image(&y), &mut opt)?;
        if epoch % log_every == 0 {
            let (_, p, s) = quality(&out)?;
            rows.push(row(epoch, "train", loss, p, Some(s), clock.seconds()));
        }
    }
    let out = model.infer(&x)?;
    let loss = metrics::mse(&out, &y)?;
    let (reconstruction, psnr, ssim) = quality(&out)?;
    rows.push(row(opts.epochs, "final", loss, psnr, Some(ssim), clock.seconds()));
    Ok(CaeOutcome {
        rows,
        reconstruction,
        psnr,
        ssim,
        gray_psnr,
        gray_ssim,
    })
}
