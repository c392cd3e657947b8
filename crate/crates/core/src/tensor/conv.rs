//! 2-D convolution via im2col + GEMM.
//!
//! `conv2d` is a cross-correlation: the kernel is not flipped. Input is
//! `[N, C_in, H, W]`, kernel `[C_out, C_in, kh, kw]`, output
//! `[N, C_out, H', W']` with `H' = (H + 2·pad − kh) / stride + 1`.
//!
//! Samples of a batch are processed in parallel; per-sample results are
//! combined in index order so results do not depend on thread scheduling.

use rayon::prelude::*;

use super::gemm::{gemm, Transpose};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub const fn new(stride: usize, pad: usize) -> Self {
        ConvGeometry { stride, pad }
    }

    /// Output extent of a forward convolution along one axis.
    pub fn out_extent(&self, input: usize, kernel: usize) -> Result<usize> {
        if self.stride == 0 {
            return Err(Error::Geometry("stride must be >= 1".into()));
        }
        let padded = input + 2 * self.pad;
        if kernel == 0 || kernel > padded {
            return Err(Error::Geometry(format!(
                "kernel extent {kernel} exceeds padded input extent {padded}"
            )));
        }
        Ok((padded - kernel) / self.stride + 1)
    }

    /// Output extent of a transposed convolution along one axis:
    /// `(input − 1)·stride − 2·pad + kernel + output_padding`.
    pub fn transposed_extent(&self, input: usize, kernel: usize, output_padding: usize) -> Result<usize> {
        if self.stride == 0 {
            return Err(Error::Geometry("stride must be >= 1".into()));
        }
        if output_padding >= self.stride && output_padding > 0 {
            return Err(Error::Geometry(format!(
                "output padding {output_padding} must be smaller than stride {}",
                self.stride
            )));
        }
        let full = (input - 1) * self.stride + kernel + output_padding;
        if full <= 2 * self.pad {
            return Err(Error::Geometry(format!(
                "padding {} leaves no output for input extent {input}",
                self.pad
            )));
        }
        Ok(full - 2 * self.pad)
    }
}

struct Dims {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn check_rank4(t: &Tensor, what: &str) -> Result<[usize; 4]> {
    match *t.dims() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::Geometry(format!("{what} must be rank 4, got {}", t.shape()))),
    }
}

fn forward_dims(x: &Tensor, k: &Tensor, geom: ConvGeometry) -> Result<Dims> {
    let [n, c_in, h, w] = check_rank4(x, "conv input")?;
    let [c_out, kc, kh, kw] = check_rank4(k, "conv kernel")?;
    if kc != c_in {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            lhs: x.shape().clone(),
            rhs: k.shape().clone(),
        });
    }
    let oh = geom.out_extent(h, kh)?;
    let ow = geom.out_extent(w, kw)?;
    Ok(Dims {
        n,
        c_in,
        h,
        w,
        c_out,
        kh,
        kw,
        oh,
        ow,
    })
}

/// Unfolds one `[C, H, W]` sample into a `[C·kh·kw, oh·ow]` column matrix.
#[allow(clippy::too_many_arguments)]
pub fn im2col(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    geom: ConvGeometry,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let cols_w = oh * ow;
    let mut cols = vec![0.0; c * kh * kw * cols_w];
    let pad = geom.pad as isize;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let dst = &mut cols[row * cols_w..(row + 1) * cols_w];
                for oy in 0..oh {
                    let iy = (oy * geom.stride + ki) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * geom.stride + kj) as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            dst[oy * ow + ox] = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back into a `[C, H, W]` buffer,
/// summing overlapping contributions.
#[allow(clippy::too_many_arguments)]
pub fn col2im(
    cols: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    geom: ConvGeometry,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let cols_w = oh * ow;
    let mut x = vec![0.0; c * h * w];
    let pad = geom.pad as isize;
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src = &cols[row * cols_w..(row + 1) * cols_w];
                for oy in 0..oh {
                    let iy = (oy * geom.stride + ki) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * geom.stride + kj) as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            plane[iy as usize * w + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

pub fn conv2d(x: &Tensor, k: &Tensor, geom: ConvGeometry) -> Result<Tensor> {
    let d = forward_dims(x, k, geom)?;
    let in_sample = d.c_in * d.h * d.w;
    let out_sample = d.c_out * d.oh * d.ow;
    let patch = d.c_in * d.kh * d.kw;
    let per_sample: Vec<Vec<f64>> = (0..d.n)
        .into_par_iter()
        .map(|b| {
            let xs = &x.data()[b * in_sample..(b + 1) * in_sample];
            let cols = im2col(xs, d.c_in, d.h, d.w, d.kh, d.kw, geom, d.oh, d.ow);
            let mut out = vec![0.0; out_sample];
            gemm(d.c_out, patch, d.oh * d.ow, k.data(), Transpose::No, &cols, Transpose::No, &mut out, false);
            out
        })
        .collect();
    Tensor::from_vec([d.n, d.c_out, d.oh, d.ow], per_sample.concat())
}

/// Gradient of `conv2d` with respect to its input, given the upstream
/// gradient `gout` and the spatial extent of the original input.
pub fn conv2d_grad_input(gout: &Tensor, k: &Tensor, geom: ConvGeometry, input_hw: (usize, usize)) -> Result<Tensor> {
    let [n, c_out, oh, ow] = check_rank4(gout, "conv output gradient")?;
    let [kc_out, c_in, kh, kw] = check_rank4(k, "conv kernel")?;
    let (h, w) = input_hw;
    if kc_out != c_out || geom.out_extent(h, kh)? != oh || geom.out_extent(w, kw)? != ow {
        return Err(Error::Geometry(format!(
            "gradient {} inconsistent with kernel {} and input {h}x{w}",
            gout.shape(),
            k.shape()
        )));
    }
    let patch = c_in * kh * kw;
    let per_sample: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|b| {
            let g = &gout.data()[b * c_out * oh * ow..(b + 1) * c_out * oh * ow];
            let mut cols = vec![0.0; patch * oh * ow];
            gemm(patch, c_out, oh * ow, k.data(), Transpose::Yes, g, Transpose::No, &mut cols, false);
            col2im(&cols, c_in, h, w, kh, kw, geom, oh, ow)
        })
        .collect();
    Tensor::from_vec([n, c_in, h, w], per_sample.concat())
}

/// Gradient of `conv2d` with respect to its kernel.
pub fn conv2d_grad_kernel(x: &Tensor, gout: &Tensor, kernel_dims: [usize; 4], geom: ConvGeometry) -> Result<Tensor> {
    let [n, c_in, h, w] = check_rank4(x, "conv input")?;
    let [gn, c_out, oh, ow] = check_rank4(gout, "conv output gradient")?;
    let [kc_out, kc_in, kh, kw] = kernel_dims;
    if gn != n || kc_out != c_out || kc_in != c_in || geom.out_extent(h, kh)? != oh || geom.out_extent(w, kw)? != ow {
        return Err(Error::Geometry(format!(
            "gradient {} inconsistent with input {} and kernel {kernel_dims:?}",
            gout.shape(),
            x.shape()
        )));
    }
    let patch = c_in * kh * kw;
    let per_sample: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|b| {
            let xs = &x.data()[b * c_in * h * w..(b + 1) * c_in * h * w];
            let g = &gout.data()[b * c_out * oh * ow..(b + 1) * c_out * oh * ow];
            let cols = im2col(xs, c_in, h, w, kh, kw, geom, oh, ow);
            let mut dk = vec![0.0; c_out * patch];
            gemm(c_out, oh * ow, patch, g, Transpose::No, &cols, Transpose::Yes, &mut dk, false);
            dk
        })
        .collect();
    let mut total = vec![0.0; c_out * patch];
    for dk in &per_sample {
        for (t, v) in total.iter_mut().zip(dk) {
            *t += v;
        }
    }
    Tensor::from_vec(kernel_dims.to_vec(), total)
}

/// Transposed convolution: the adjoint of [`conv2d`] with the same kernel and
/// geometry. `x` is `[N, C, H, W]` and `k` is `[C, C_out, kh, kw]` (the kernel
/// of the forward convolution it transposes); output extent is
/// `(H − 1)·stride − 2·pad + kh + output_padding`.
pub fn conv_transpose2d(x: &Tensor, k: &Tensor, geom: ConvGeometry, output_padding: usize) -> Result<Tensor> {
    let [_, c, h, w] = check_rank4(x, "transposed conv input")?;
    let [kc, _, kh, kw] = check_rank4(k, "transposed conv kernel")?;
    if kc != c {
        return Err(Error::ShapeMismatch {
            op: "conv_transpose2d",
            lhs: x.shape().clone(),
            rhs: k.shape().clone(),
        });
    }
    let oh = geom.transposed_extent(h, kh, output_padding)?;
    let ow = geom.transposed_extent(w, kw, output_padding)?;
    conv2d_grad_input(x, k, geom, (oh, ow))
}
