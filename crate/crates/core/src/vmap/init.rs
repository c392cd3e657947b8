//! Variance-matched initialization.
//!
//! A shared weight is a `D`-vector `W = r·u`: `u` is a uniform `[0, 1]^D`
//! draw normalized to unit length and `r` is chi-distributed with `D` degrees
//! of freedom and scale `σ`, so `E[|W|²] = D·σ²`. `σ` follows the Glorot
//! (`√(2 / (D·(n_in + n_out)))`) or He (`√(2 / (D·n_in))`) criterion.

use super::{LMatrix, LMode};
use crate::error::{Error, Result};
use crate::tensor::{SeededRng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Criterion {
    Glorot,
    He,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InitSpec {
    pub criterion: Criterion,
    pub d: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub l_mode: LMode,
}

impl InitSpec {
    /// Fans of a conv layer in the bundle view: `(c/D)·kh·kw`.
    pub fn for_conv(criterion: Criterion, d: usize, c_in: usize, c_out: usize, kh: usize, kw: usize, l_mode: LMode) -> Self {
        InitSpec {
            criterion,
            d,
            n_in: (c_in / d) * kh * kw,
            n_out: (c_out / d) * kh * kw,
            l_mode,
        }
    }

    pub fn sigma(&self) -> Result<f64> {
        if self.d == 0 || self.n_in == 0 || (self.criterion == Criterion::Glorot && self.n_out == 0) {
            return Err(Error::InvalidArgument(format!("degenerate init spec {self:?}")));
        }
        let d = self.d as f64;
        Ok(match self.criterion {
            Criterion::Glorot => (2.0 / (d * (self.n_in + self.n_out) as f64)).sqrt(),
            Criterion::He => (2.0 / (d * self.n_in as f64)).sqrt(),
        })
    }
}

/// Draws shared weights of shape `[outer..., D, inner...]`, where
/// `component_axis` names the axis of length `D`, plus an `L` per
/// `spec.l_mode`.
pub fn init_weights(spec: &InitSpec, dims: &[usize], component_axis: usize, rng: &mut SeededRng) -> Result<(Tensor, LMatrix)> {
    let sigma = spec.sigma()?;
    let d = spec.d;
    if dims.get(component_axis) != Some(&d) {
        return Err(Error::InvalidShape(format!(
            "axis {component_axis} of {dims:?} must have length D = {d}"
        )));
    }
    let outer: usize = dims[..component_axis].iter().product();
    let inner: usize = dims[component_axis + 1..].iter().product();
    let mut data = vec![0.0; outer * d * inner];
    let mut dir = vec![0.0; d];
    for o in 0..outer {
        for p in 0..inner {
            let norm = loop {
                for c in dir.iter_mut() {
                    *c = rng.next_f64();
                }
                let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > 1e-12 {
                    break n;
                }
            };
            let r = sigma * rng.chi(d);
            for (c, u) in dir.iter().enumerate() {
                data[(o * d + c) * inner + p] = r * u / norm;
            }
        }
    }
    let l = LMatrix::init(d, spec.l_mode, rng)?;
    Ok((Tensor::from_vec(dims.to_vec(), data)?, l))
}

/// Glorot normal initialization for a real layer with the given fans.
pub fn glorot_real(dims: &[usize], fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Result<Tensor> {
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    rng.normal_tensor(dims, std)
}
