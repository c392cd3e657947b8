use std::sync::Arc;

use super::init::{glorot_real, init_weights, Criterion, InitSpec};
use super::{circulant, hamilton_signs, hamilton_table, LMatrix, LMode};
use crate::autodiff::{BlockTable, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{self, ConvGeometry, SeededRng, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamRole {
    /// Full real kernel or weight matrix.
    Weight,
    /// Shared kernels of a structured layer.
    Shared,
    /// The `L` coefficient matrix.
    LMatrix,
    Bias,
}

impl ParamRole {
    pub fn name(self) -> &'static str {
        match self {
            ParamRole::Weight => "weight",
            ParamRole::Shared => "shared",
            ParamRole::LMatrix => "l",
            ParamRole::Bias => "bias",
        }
    }

    pub fn parse(s: &str) -> Option<ParamRole> {
        [ParamRole::Weight, ParamRole::Shared, ParamRole::LMatrix, ParamRole::Bias]
            .into_iter()
            .find(|r| r.name() == s)
    }
}

pub struct ParamRef<'a> {
    pub role: ParamRole,
    pub trainable: bool,
    pub value: &'a Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvMode {
    Forward,
    Transposed { output_padding: usize },
}

/// Which forward implementation [`VectorMapConv2d::infer_with`] uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ForwardPath {
    /// Build the full kernel bank, then run one convolution.
    Materialized,
    /// Convolve each input axis with each shifted kernel set and accumulate
    /// into the output axes without building the bank.
    Accumulated,
}

pub trait Layer: Send + Sync {
    /// Parameters in a fixed order; [`Layer::forward`] receives their tape
    /// variables in the same order.
    fn params(&self) -> Vec<ParamRef<'_>>;

    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn forward(&self, tape: &mut Tape, x: Var, p: &[Var]) -> Result<Var>;

    /// Number of stored scalars, including `L` and bias.
    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.numel()).sum()
    }

    /// Forward pass without gradient tracking.
    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let p: Vec<Var> = self.params().iter().map(|p| tape.constant(p.value.clone())).collect();
        let y = self.forward(&mut tape, xv, &p)?;
        Ok(tape.value(y).clone())
    }
}

fn check_divisible(what: &'static str, value: usize, d: usize) -> Result<()> {
    if d == 0 || value % d != 0 || value == 0 {
        return Err(Error::Divisibility { what, value, d });
    }
    Ok(())
}

fn check_channels(tape: &Tape, x: Var, expected: usize) -> Result<()> {
    let xv = tape.value(x);
    if xv.shape().rank() != 4 || xv.dims()[1] != expected {
        return Err(Error::InvalidShape(format!(
            "layer expects [N, {expected}, H, W] input, got {}",
            xv.shape()
        )));
    }
    Ok(())
}

fn apply_conv(tape: &mut Tape, x: Var, bank: Var, geom: ConvGeometry, mode: ConvMode) -> Result<Var> {
    match mode {
        ConvMode::Forward => tape.conv2d(x, bank, geom),
        ConvMode::Transposed { output_padding } => {
            let kt = tape.swap_leading_axes(bank)?;
            tape.conv_transpose2d(x, kt, geom, output_padding)
        }
    }
}

fn apply_conv_tensor(x: &Tensor, bank: &Tensor, geom: ConvGeometry, mode: ConvMode) -> Result<Tensor> {
    match mode {
        ConvMode::Forward => tensor::conv2d(x, bank, geom),
        ConvMode::Transposed { output_padding } => {
            tensor::conv_transpose2d(x, &bank.swap_leading_axes()?, geom, output_padding)
        }
    }
}

fn maybe_bias(tape: &mut Tape, y: Var, bias: Option<Var>) -> Result<Var> {
    match bias {
        Some(b) => tape.add_channel_bias(y, b),
        None => Ok(y),
    }
}

/// Plain real convolution. The kernel is `[C_out, C_in, kh, kw]` in both
/// modes; a transposed layer maps `C_in` channels to `C_out`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub c_in: usize,
    pub c_out: usize,
    pub geom: ConvGeometry,
    pub mode: ConvMode,
    pub kernel: Tensor,
    pub bias: Option<Tensor>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        geom: ConvGeometry,
        mode: ConvMode,
        bias: bool,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let (kh, kw) = kernel;
        let k = glorot_real(&[c_out, c_in, kh, kw], c_in * kh * kw, c_out * kh * kw, rng)?;
        Ok(Conv2d {
            c_in,
            c_out,
            geom,
            mode,
            kernel: k,
            bias: bias.then(|| Tensor::zeros([c_out])),
        })
    }
}

impl Layer for Conv2d {
    fn params(&self) -> Vec<ParamRef<'_>> {
        let mut v = vec![ParamRef {
            role: ParamRole::Weight,
            trainable: true,
            value: &self.kernel,
        }];
        if let Some(b) = &self.bias {
            v.push(ParamRef {
                role: ParamRole::Bias,
                trainable: true,
                value: b,
            });
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.kernel];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }

    fn forward(&self, tape: &mut Tape, x: Var, p: &[Var]) -> Result<Var> {
        check_channels(tape, x, self.c_in)?;
        let y = apply_conv(tape, x, p[0], self.geom, self.mode)?;
        maybe_bias(tape, y, p.get(1).copied())
    }
}

/// Vector map convolution with `D`-bundle weight sharing and learnable `L`.
#[derive(Clone, Debug)]
pub struct VectorMapConv2d {
    pub d: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub geom: ConvGeometry,
    pub mode: ConvMode,
    /// `[C_out/D, C_in/D, D, kh, kw]`.
    pub shared: Tensor,
    pub l: LMatrix,
    pub l_trainable: bool,
    pub bias: Option<Tensor>,
    table: Arc<BlockTable>,
}

impl VectorMapConv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        d: usize,
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        geom: ConvGeometry,
        mode: ConvMode,
        bias: bool,
        criterion: Criterion,
        l_mode: LMode,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        check_divisible("c_in", c_in, d)?;
        check_divisible("c_out", c_out, d)?;
        let (kh, kw) = kernel;
        let spec = InitSpec::for_conv(criterion, d, c_in, c_out, kh, kw, l_mode);
        let (shared, l) = init_weights(&spec, &[c_out / d, c_in / d, d, kh, kw], 2, rng)?;
        Ok(VectorMapConv2d {
            d,
            c_in,
            c_out,
            geom,
            mode,
            shared,
            l,
            l_trainable: true,
            bias: bias.then(|| Tensor::zeros([c_out])),
            table: circulant(d),
        })
    }

    /// Builds a layer from explicit weights.
    pub fn from_parts(shared: Tensor, l: LMatrix, geom: ConvGeometry, mode: ConvMode, bias: Option<Tensor>) -> Result<Self> {
        let d = l.d();
        let (bo, bi) = match *shared.dims() {
            [bo, bi, kd, _, _] if kd == d => (bo, bi),
            _ => {
                return Err(Error::InvalidShape(format!(
                    "shared kernels must be [B_out, B_in, {d}, kh, kw], got {}",
                    shared.shape()
                )))
            }
        };
        if let Some(b) = &bias {
            if b.dims() != [bo * d] {
                return Err(Error::InvalidShape(format!("bias must be [{}], got {}", bo * d, b.shape())));
            }
        }
        Ok(VectorMapConv2d {
            d,
            c_in: bi * d,
            c_out: bo * d,
            geom,
            mode,
            shared,
            l,
            l_trainable: true,
            bias,
            table: circulant(d),
        })
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.shared.dims()[3], self.shared.dims()[4])
    }

    /// Full `[C_out, C_in, kh, kw]` kernel bank.
    pub fn expanded_bank(&self) -> Result<Tensor> {
        super::expand_weights(&self.shared, &self.l)
    }

    pub fn infer_with(&self, x: &Tensor, path: ForwardPath) -> Result<Tensor> {
        let y = match path {
            ForwardPath::Materialized => apply_conv_tensor(x, &self.expanded_bank()?, self.geom, self.mode)?,
            ForwardPath::Accumulated => self.forward_accumulated(x)?,
        };
        match &self.bias {
            Some(b) => add_bias_tensor(&y, b),
            None => Ok(y),
        }
    }

    fn forward_accumulated(&self, x: &Tensor) -> Result<Tensor> {
        let d = self.d;
        let [n, c, h, w] = match *x.dims() {
            [a, b, c, e] => [a, b, c, e],
            _ => return Err(Error::InvalidShape(format!("expected rank-4 input, got {}", x.shape()))),
        };
        if c != self.c_in {
            return Err(Error::InvalidShape(format!("expected {} input channels, got {c}", self.c_in)));
        }
        let (bo, bi) = (self.c_out / d, self.c_in / d);
        let (kh, kw) = self.kernel_size();
        let axes: Vec<Tensor> = (0..d).map(|j| gather_axis(x, d, j, [n, bi, h, w])).collect();
        let shifts: Vec<Tensor> = (0..d).map(|s| shared_slice(&self.shared, s, [bo, bi, kh, kw])).collect();
        let mut out_axes: Vec<Option<Tensor>> = vec![None; d];
        for (j, xj) in axes.iter().enumerate() {
            for (s, ks) in shifts.iter().enumerate() {
                let i = (j + d - s) % d;
                let coef = self.l.get(i, j);
                let part = apply_conv_tensor(xj, ks, self.geom, self.mode)?;
                match &mut out_axes[i] {
                    Some(acc) => {
                        for (a, v) in acc.data_mut().iter_mut().zip(part.data()) {
                            *a += coef * v;
                        }
                    }
                    slot @ None => *slot = Some(part.scale(coef)),
                }
            }
        }
        let out_axes: Vec<Tensor> = out_axes.into_iter().map(|t| t.expect("every axis visited")).collect();
        Ok(interleave_axes(&out_axes, d))
    }
}

/// Channels `v·D + j` for all bundles `v`.
fn gather_axis(x: &Tensor, d: usize, j: usize, dims: [usize; 4]) -> Tensor {
    let [n, bi, h, w] = dims;
    let plane = h * w;
    let mut out = Vec::with_capacity(n * bi * plane);
    for b in 0..n {
        for v in 0..bi {
            let c = (b * bi * d + v * d + j) * plane;
            out.extend_from_slice(&x.data()[c..c + plane]);
        }
    }
    Tensor::from_vec(dims.to_vec(), out).expect("gathered axis")
}

fn shared_slice(shared: &Tensor, s: usize, dims: [usize; 4]) -> Tensor {
    let [bo, bi, kh, kw] = dims;
    let d = shared.dims()[2];
    let area = kh * kw;
    let mut out = Vec::with_capacity(bo * bi * area);
    for u in 0..bo {
        for v in 0..bi {
            let base = ((u * bi + v) * d + s) * area;
            out.extend_from_slice(&shared.data()[base..base + area]);
        }
    }
    Tensor::from_vec(dims.to_vec(), out).expect("shared slice")
}

/// Inverse of [`gather_axis`]: axis tensors `[N, B, H, W]` to `[N, B·D, H, W]`.
fn interleave_axes(axes: &[Tensor], d: usize) -> Tensor {
    let [n, bo, h, w] = match *axes[0].dims() {
        [a, b, c, e] => [a, b, c, e],
        _ => unreachable!(),
    };
    let plane = h * w;
    let mut out = vec![0.0; n * bo * d * plane];
    for (i, t) in axes.iter().enumerate() {
        for b in 0..n {
            for u in 0..bo {
                let src = (b * bo + u) * plane;
                let dst = (b * bo * d + u * d + i) * plane;
                out[dst..dst + plane].copy_from_slice(&t.data()[src..src + plane]);
            }
        }
    }
    Tensor::from_vec([n, bo * d, h, w], out).expect("interleaved")
}

fn add_bias_tensor(y: &Tensor, b: &Tensor) -> Result<Tensor> {
    let c = b.numel();
    let plane: usize = y.dims()[2..].iter().product();
    let mut out = y.clone();
    for (idx, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let bv = b.data()[idx % c];
        chunk.iter_mut().for_each(|v| *v += bv);
    }
    Ok(out)
}

impl Layer for VectorMapConv2d {
    fn params(&self) -> Vec<ParamRef<'_>> {
        let mut v = vec![
            ParamRef {
                role: ParamRole::Shared,
                trainable: true,
                value: &self.shared,
            },
            ParamRef {
                role: ParamRole::LMatrix,
                trainable: self.l_trainable,
                value: self.l.tensor(),
            },
        ];
        if let Some(b) = &self.bias {
            v.push(ParamRef {
                role: ParamRole::Bias,
                trainable: true,
                value: b,
            });
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.shared, self.l.tensor_mut()];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }

    fn forward(&self, tape: &mut Tape, x: Var, p: &[Var]) -> Result<Var> {
        check_channels(tape, x, self.c_in)?;
        let gathered = tape.block_gather(p[0], self.table.clone())?;
        let bank = tape.scale_by_l(gathered, p[1])?;
        let y = apply_conv(tape, x, bank, self.geom, self.mode)?;
        maybe_bias(tape, y, p.get(2).copied())
    }
}

/// Quaternion convolution: kernel components `(A, B, C, D)` combined with
/// the fixed Hamilton sign/permutation pattern.
#[derive(Clone, Debug)]
pub struct QuaternionConv2d {
    pub c_in: usize,
    pub c_out: usize,
    pub geom: ConvGeometry,
    pub mode: ConvMode,
    /// `[C_out/4, C_in/4, 4, kh, kw]`, components in `(A, B, C, D)` order.
    pub shared: Tensor,
    pub bias: Option<Tensor>,
    table: Arc<BlockTable>,
}

impl QuaternionConv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        geom: ConvGeometry,
        mode: ConvMode,
        bias: bool,
        criterion: Criterion,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        check_divisible("c_in", c_in, 4)?;
        check_divisible("c_out", c_out, 4)?;
        let (kh, kw) = kernel;
        let spec = InitSpec::for_conv(criterion, 4, c_in, c_out, kh, kw, LMode::Pattern);
        let (shared, _) = init_weights(&spec, &[c_out / 4, c_in / 4, 4, kh, kw], 2, rng)?;
        Ok(Self::from_shared(shared, geom, mode, bias.then(|| Tensor::zeros([c_out]))))
    }

    pub fn from_shared(shared: Tensor, geom: ConvGeometry, mode: ConvMode, bias: Option<Tensor>) -> Self {
        let dims = shared.dims();
        QuaternionConv2d {
            c_in: dims[1] * 4,
            c_out: dims[0] * 4,
            geom,
            mode,
            shared,
            bias,
            table: Arc::new(hamilton_table()),
        }
    }
}

impl Layer for QuaternionConv2d {
    fn params(&self) -> Vec<ParamRef<'_>> {
        let mut v = vec![ParamRef {
            role: ParamRole::Shared,
            trainable: true,
            value: &self.shared,
        }];
        if let Some(b) = &self.bias {
            v.push(ParamRef {
                role: ParamRole::Bias,
                trainable: true,
                value: b,
            });
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.shared];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }

    fn forward(&self, tape: &mut Tape, x: Var, p: &[Var]) -> Result<Var> {
        check_channels(tape, x, self.c_in)?;
        let signs = tape.constant(hamilton_signs());
        let gathered = tape.block_gather(p[0], self.table.clone())?;
        let bank = tape.scale_by_l(gathered, signs)?;
        let y = apply_conv(tape, x, bank, self.geom, self.mode)?;
        maybe_bias(tape, y, p.get(1).copied())
    }
}

/// Real fully connected layer, `y = x·Wᵀ + b` with `W` `[out, in]`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Dense {
    pub fn new(in_features: usize, out_features: usize, bias: bool, rng: &mut SeededRng) -> Result<Self> {
        Ok(Dense {
            weight: glorot_real(&[out_features, in_features], in_features, out_features, rng)?,
            bias: bias.then(|| Tensor::zeros([out_features])),
        })
    }
}

impl Layer for Dense {
    fn params(&self) -> Vec<ParamRef<'_>> {
        let mut v = vec![ParamRef {
            role: ParamRole::Weight,
            trainable: true,
            value: &self.weight,
        }];
        if let Some(b) = &self.bias {
            v.push(ParamRef {
                role: ParamRole::Bias,
                trainable: true,
                value: b,
            });
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }

    fn forward(&self, tape: &mut Tape, x: Var, p: &[Var]) -> Result<Var> {
        let wt = tape.transpose(p[0])?;
        let y = tape.matmul(x, wt)?;
        maybe_bias(tape, y, p.get(1).copied())
    }
}

/// Fully connected vector map layer over `D`-dimensional feature bundles.
#[derive(Clone, Debug)]
pub struct VectorMapDense {
    pub d: usize,
    pub in_features: usize,
    pub out_features: usize,
    /// `[out_features, in_features, D]`.
    pub shared: Tensor,
    pub l: LMatrix,
    pub bias: Option<Tensor>,
    table: Arc<BlockTable>,
}

impl VectorMapDense {
    /// `in_features` and `out_features` count bundles, not scalars.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        d: usize,
        in_features: usize,
        out_features: usize,
        bias: bool,
        criterion: Criterion,
        l_mode: LMode,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let spec = InitSpec {
            criterion,
            d,
            n_in: in_features,
            n_out: out_features,
            l_mode,
        };
        let (shared, l) = init_weights(&spec, &[out_features, in_features, d], 2, rng)?;
        Ok(VectorMapDense {
            d,
            in_features,
            out_features,
            shared,
            l,
            bias: bias.then(|| Tensor::zeros([out_features * d])),
            table: circulant(d),
        })
    }

    pub fn from_parts(shared: Tensor, l: LMatrix, bias: Option<Tensor>) -> Result<Self> {
        let d = l.d();
        let (out_f, in_f) = match *shared.dims() {
            [o, i, kd] if kd == d => (o, i),
            _ => {
                return Err(Error::InvalidShape(format!(
                    "shared weights must be [out, in, {d}], got {}",
                    shared.shape()
                )))
            }
        };
        Ok(VectorMapDense {
            d,
            in_features: in_f,
            out_features: out_f,
            shared,
            l,
            bias,
            table: circulant(d),
        })
    }
}

impl Layer for VectorMapDense {
    fn params(&self) -> Vec<ParamRef<'_>> {
        let mut v = vec![
            ParamRef {
                role: ParamRole::Shared,
                trainable: true,
                value: &self.shared,
            },
            ParamRef {
                role: ParamRole::LMatrix,
                trainable: true,
                value: self.l.tensor(),
            },
        ];
        if let Some(b) = &self.bias {
            v.push(ParamRef {
                role: ParamRole::Bias,
                trainable: true,
                value: b,
            });
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.shared, self.l.tensor_mut()];
        if let Some(b) = &mut self.bias {
            v.push(b);
        }
        v
    }

    fn forward(&self, tape: &mut Tape, x: Var, p: &[Var]) -> Result<Var> {
        let d = self.d;
        let xv = tape.value(x);
        if xv.dims().len() != 2 || xv.dims()[1] != self.in_features * d {
            return Err(Error::InvalidShape(format!(
                "dense layer expects [N, {}], got {}",
                self.in_features * d,
                xv.shape()
            )));
        }
        let as_conv = tape.reshape(p[0], &[self.out_features, self.in_features, d, 1, 1])?;
        let gathered = tape.block_gather(as_conv, self.table.clone())?;
        let bank = tape.scale_by_l(gathered, p[1])?;
        let w = tape.reshape(bank, &[self.out_features * d, self.in_features * d])?;
        let wt = tape.transpose(w)?;
        let y = tape.matmul(x, wt)?;
        maybe_bias(tape, y, p.get(2).copied())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_count_conv_d3() {
        let layer = VectorMapConv2d::new(
            3,
            12,
            12,
            (3, 3),
            ConvGeometry::new(1, 1),
            ConvMode::Forward,
            false,
            Criterion::He,
            LMode::Pattern,
            &mut SeededRng::new(1),
        )
        .unwrap();
        assert_eq!(layer.param_count(), 441);
        let real = Conv2d::new(12, 12, (3, 3), ConvGeometry::new(1, 1), ConvMode::Forward, false, &mut SeededRng::new(1)).unwrap();
        assert_eq!(real.param_count(), 1296);
    }

    #[test]
    fn param_count_d1_is_real_plus_one() {
        let mut rng = SeededRng::new(2);
        let v = VectorMapConv2d::new(1, 5, 7, (3, 3), ConvGeometry::new(1, 0), ConvMode::Forward, false, Criterion::He, LMode::Pattern, &mut rng).unwrap();
        let r = Conv2d::new(5, 7, (3, 3), ConvGeometry::new(1, 0), ConvMode::Forward, false, &mut rng).unwrap();
        assert_eq!(v.param_count(), r.param_count() + 1);
    }

    #[test]
    fn param_count_dense() {
        let mut rng = SeededRng::new(3);
        let v = VectorMapDense::new(4, 2, 2, false, Criterion::Glorot, LMode::Pattern, &mut rng).unwrap();
        assert_eq!(v.param_count(), 32);
        let r = Dense::new(8, 8, false, &mut rng).unwrap();
        assert_eq!(r.param_count(), 64);
    }

    #[test]
    fn divisibility_rejected() {
        let mut rng = SeededRng::new(4);
        let e = VectorMapConv2d::new(3, 4, 6, (3, 3), ConvGeometry::new(1, 0), ConvMode::Forward, false, Criterion::He, LMode::Pattern, &mut rng);
        assert!(matches!(e, Err(Error::Divisibility { what: "c_in", .. })));
        let e = QuaternionConv2d::new(4, 6, (1, 1), ConvGeometry::new(1, 0), ConvMode::Forward, false, Criterion::He, &mut rng);
        assert!(matches!(e, Err(Error::Divisibility { what: "c_out", .. })));
    }

    #[test]
    fn wrong_input_channels() {
        let mut rng = SeededRng::new(5);
        let layer = VectorMapConv2d::new(2, 4, 4, (1, 1), ConvGeometry::new(1, 0), ConvMode::Forward, false, Criterion::He, LMode::Pattern, &mut rng).unwrap();
        assert!(layer.infer(&Tensor::zeros([1, 6, 2, 2])).is_err());
    }

    #[test]
    fn accumulated_matches_materialized() {
        let mut rng = SeededRng::new(6);
        for mode in [ConvMode::Forward, ConvMode::Transposed { output_padding: 1 }] {
            let layer = VectorMapConv2d::new(3, 6, 9, (3, 3), ConvGeometry::new(2, 1), mode, true, Criterion::He, LMode::RandomSign, &mut rng).unwrap();
            let x = rng.uniform_tensor(&[2, 6, 5, 5], -1.0, 1.0).unwrap();
            let a = layer.infer_with(&x, ForwardPath::Materialized).unwrap();
            let b = layer.infer_with(&x, ForwardPath::Accumulated).unwrap();
            assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
            assert_eq!(a, layer.infer(&x).unwrap());
        }
    }
}
