//! `L` inspection and forward-path benchmarking.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::tensor::{ConvGeometry, SeededRng, Tensor};
use crate::vmap::{CheckpointEntry, ConvMode, Criterion, ForwardPath, LMatrix, LMode, ParamRole, VectorMapConv2d};

/// Histogram bin edges run from `HIST_LO` to `HIST_HI` in steps of
/// `HIST_STEP`; values outside fall into the first or last bin.
pub const HIST_LO: f64 = -2.0;
pub const HIST_HI: f64 = 2.0;
pub const HIST_STEP: f64 = 0.25;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerL {
    pub name: String,
    pub initial: Tensor,
    pub values: Tensor,
}

impl LayerL {
    pub fn d(&self) -> usize {
        self.values.dims()[0]
    }

    /// Entries whose sign matches the initial value's sign.
    pub fn retained(&self) -> usize {
        self.values
            .data()
            .iter()
            .zip(self.initial.data())
            .filter(|(v, i)| v.signum() == i.signum() && **v != 0.0)
            .count()
    }

    pub fn histogram(&self) -> Vec<usize> {
        histogram(self.values.data())
    }
}

pub fn histogram_bins() -> usize {
    ((HIST_HI - HIST_LO) / HIST_STEP).round() as usize
}

pub fn histogram(values: &[f64]) -> Vec<usize> {
    let bins = histogram_bins();
    let mut counts = vec![0; bins];
    for &v in values {
        let b = ((v - HIST_LO) / HIST_STEP).floor();
        let b = if b.is_nan() { 0 } else { b.clamp(0.0, (bins - 1) as f64) as usize };
        counts[b] += 1;
    }
    counts
}

#[derive(Clone, Debug, PartialEq)]
pub struct LReport {
    pub layers: Vec<LayerL>,
}

impl LReport {
    pub fn retained(&self) -> usize {
        self.layers.iter().map(LayerL::retained).sum()
    }

    pub fn total(&self) -> usize {
        self.layers.iter().map(|l| l.values.numel()).sum()
    }

    pub fn retention(&self) -> f64 {
        if self.total() == 0 {
            return 1.0;
        }
        self.retained() as f64 / self.total() as f64
    }

    /// Per-layer text histograms followed by the overall retention line.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for layer in &self.layers {
            let _ = writeln!(
                out,
                "{} (d={}): {}/{} entries kept their initial sign",
                layer.name,
                layer.d(),
                layer.retained(),
                layer.values.numel()
            );
            for (b, &count) in layer.histogram().iter().enumerate() {
                let lo = HIST_LO + b as f64 * HIST_STEP;
                let _ = writeln!(out, "  [{:>5.2}, {:>5.2}) {:>4} {}", lo, lo + HIST_STEP, count, "#".repeat(count));
            }
        }
        let _ = writeln!(
            out,
            "sign retention: {}/{} = {:.2}%",
            self.retained(),
            self.total(),
            100.0 * self.retention()
        );
        out
    }

    /// CSV rows `layer,i,j,initial,value,retained`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["layer", "i", "j", "initial", "value", "retained"])?;
        for layer in &self.layers {
            let d = layer.d();
            for i in 0..d {
                for j in 0..d {
                    let init = layer.initial.at(&[i, j]);
                    let v = layer.values.at(&[i, j]);
                    w.write_record([
                        layer.name.clone(),
                        i.to_string(),
                        j.to_string(),
                        format!("{init}"),
                        format!("{v}"),
                        u8::from(v.signum() == init.signum() && v != 0.0).to_string(),
                    ])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Collects every `L` entry of a checkpoint. Initial values come from
/// `initial` (matched by name) or, when absent, from the deterministic
/// pattern for that `D`.
pub fn inspect_l(entries: &[CheckpointEntry], initial: Option<&[CheckpointEntry]>) -> Result<LReport> {
    let mut layers = Vec::new();
    for e in entries.iter().filter(|e| e.role == ParamRole::LMatrix) {
        let d = match *e.value.dims() {
            [a, b] if a == b => a,
            _ => return Err(Error::InvalidShape(format!("{}: L must be square, got {}", e.name, e.value.shape()))),
        };
        let init = match initial {
            Some(init) => init
                .iter()
                .find(|i| i.name == e.name)
                .map(|i| i.value.clone())
                .ok_or_else(|| Error::Config(format!("initial checkpoint lacks {}", e.name)))?,
            None => LMatrix::pattern(d)?.tensor().clone(),
        };
        if init.shape() != e.value.shape() {
            return Err(Error::ShapeMismatch {
                op: "inspect-l",
                lhs: e.value.shape().clone(),
                rhs: init.shape().clone(),
            });
        }
        layers.push(LayerL {
            name: e.name.clone(),
            initial: init,
            values: e.value.clone(),
        });
    }
    if layers.is_empty() {
        return Err(Error::Config("checkpoint has no L matrices".into()));
    }
    Ok(LReport { layers })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub d: usize,
    pub path: ForwardPath,
    /// Mean wall time of one forward pass.
    pub seconds: f64,
    pub max_abs_diff: f64,
}

pub fn path_name(p: ForwardPath) -> &'static str {
    match p {
        ForwardPath::Materialized => "expanded",
        ForwardPath::Accumulated => "accumulated",
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchOptions {
    pub ds: Vec<usize>,
    /// Real channels in and out; must be divisible by every `D`.
    pub channels: usize,
    pub side: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            ds: vec![1, 2, 3, 4, 8, 16],
            channels: 48,
            side: 16,
            reps: 3,
            seed: 0,
        }
    }
}

/// Times both forward paths per `D` after checking they agree to `1e-10`.
pub fn bench(opts: &BenchOptions) -> Result<Vec<BenchRow>> {
    let root = SeededRng::new(opts.seed);
    let mut rows = Vec::new();
    for &d in &opts.ds {
        let mut rng = root.split(&format!("bench/d{d}"));
        let layer = VectorMapConv2d::new(
            d,
            opts.channels,
            opts.channels,
            (3, 3),
            ConvGeometry { stride: 1, pad: 1 },
            ConvMode::Forward,
            true,
            Criterion::Glorot,
            LMode::Pattern,
            &mut rng,
        )?;
        let x = rng.uniform_tensor(&[1, opts.channels, opts.side, opts.side], -1.0, 1.0)?;
        let a = layer.infer_with(&x, ForwardPath::Materialized)?;
        let b = layer.infer_with(&x, ForwardPath::Accumulated)?;
        let diff = a.max_abs_diff(&b)?;
        if diff >= 1e-10 {
            return Err(Error::InvalidArgument(format!("forward paths disagree by {diff:e} at d={d}")));
        }
        for path in [ForwardPath::Materialized, ForwardPath::Accumulated] {
            let start = Instant::now();
            for _ in 0..opts.reps.max(1) {
                std::hint::black_box(layer.infer_with(&x, path)?);
            }
            let seconds = start.elapsed().as_secs_f64() / opts.reps.max(1) as f64;
            rows.push(BenchRow {
                d,
                path,
                seconds: seconds.max(f64::MIN_POSITIVE),
                max_abs_diff: diff,
            });
        }
    }
    Ok(rows)
}

/// CSV with header `d,path,seconds,max_abs_diff`.
pub fn write_bench_csv(rows: &[BenchRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["d", "path", "seconds", "max_abs_diff"])?;
    for r in rows {
        w.write_record([
            r.d.to_string(),
            path_name(r.path).to_string(),
            format!("{:e}", r.seconds),
            format!("{:e}", r.max_abs_diff),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
