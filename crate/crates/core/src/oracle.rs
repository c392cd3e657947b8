//! Brute-force reference implementations.
//!
//! Everything here is written with explicit loops over raw indices and
//! deliberately avoids the im2col/GEMM kernels, the tape, and the weight
//! expansion code so it can serve as an independent check on them.

use crate::tensor::Tensor;

fn dims4(t: &Tensor) -> [usize; 4] {
    match *t.dims() {
        [a, b, c, d] => [a, b, c, d],
        _ => panic!("oracle expects rank-4 tensors, got {}", t.shape()),
    }
}

pub fn matmul_reference(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.dims()[0], a.dims()[1]);
    let n = b.dims()[1];
    assert_eq!(b.dims()[0], k);
    let mut out = Tensor::zeros([m, n]);
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a.at(&[i, p]) * b.at(&[p, j]);
            }
            out.set(&[i, j], acc);
        }
    }
    out
}

/// Direct cross-correlation with zero padding.
pub fn conv2d_reference(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Tensor {
    let [n, c_in, h, w] = dims4(x);
    let [c_out, kc, kh, kw] = dims4(k);
    assert_eq!(kc, c_in);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros([n, c_out, oh, ow]);
    for b in 0..n {
        for co in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c_in {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += x.at(&[b, ci, iy as usize, ix as usize]) * k.at(&[co, ci, ky, kx]);
                                }
                            }
                        }
                    }
                    out.set(&[b, co, oy, ox], acc);
                }
            }
        }
    }
    out
}

/// Transposed convolution by scattering each input pixel through the kernel.
/// `k` is `[C, C_out, kh, kw]`.
pub fn conv_transpose2d_reference(x: &Tensor, k: &Tensor, stride: usize, pad: usize, output_padding: usize) -> Tensor {
    let [n, c, h, w] = dims4(x);
    let [kc, c_out, kh, kw] = dims4(k);
    assert_eq!(kc, c);
    let oh = (h - 1) * stride + kh + output_padding - 2 * pad;
    let ow = (w - 1) * stride + kw + output_padding - 2 * pad;
    let mut out = Tensor::zeros([n, c_out, oh, ow]);
    for b in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let v = x.at(&[b, ci, y, xx]);
                    for co in 0..c_out {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let oy = (y * stride + ky) as isize - pad as isize;
                                let ox = (xx * stride + kx) as isize - pad as isize;
                                if oy >= 0 && ox >= 0 && (oy as usize) < oh && (ox as usize) < ow {
                                    let idx = [b, co, oy as usize, ox as usize];
                                    let cur = out.at(&idx);
                                    out.set(&idx, cur + v * k.at(&[ci, co, ky, kx]));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Circular right shift: `result[i] = v[(i − k) mod D]`.
pub fn tau_reference(v: &[f64], k: usize) -> Vec<f64> {
    let d = v.len();
    let mut out = v.to_vec();
    for _ in 0..k {
        let last = out[d - 1];
        for i in (1..d).rev() {
            out[i] = out[i - 1];
        }
        out[0] = last;
    }
    out
}

/// Expanded `D × D` matrix whose row `i` is `L[i, :] ⊙ τ^i(W)` (0-based `i`).
pub fn circulant_build_reference(w: &[f64], l: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = w.len();
    assert_eq!(l.len(), d);
    let mut rows = Vec::with_capacity(d);
    for (i, l_row) in l.iter().enumerate() {
        let shifted = tau_reference(w, i);
        rows.push((0..d).map(|j| l_row[j] * shifted[j]).collect());
    }
    rows
}

/// Pattern rule for `L` evaluated literally on 1-based indices, wrapping the
/// third case into `1..=d`.
pub fn l_pattern_reference(d: usize) -> Vec<Vec<f64>> {
    let mut l = vec![vec![-1.0; d]; d];
    for i in 1..=d {
        let mut target = i + (i - 1);
        while target > d {
            target -= d;
        }
        for j in 1..=d {
            if i == 1 || i == j || j == target {
                l[i - 1][j - 1] = 1.0;
            }
        }
    }
    l
}

/// Dense vector map layer on a single input vector, through the explicitly
/// built block matrix. `shared[u][v]` is the `D`-vector linking input bundle
/// `v` to output bundle `u`.
pub fn vmap_dense_reference(x: &[f64], shared: &[Vec<Vec<f64>>], l: &[Vec<f64>]) -> Vec<f64> {
    let d = l.len();
    let out_f = shared.len();
    let in_f = shared[0].len();
    assert_eq!(x.len(), in_f * d);
    let mut y = vec![0.0; out_f * d];
    for u in 0..out_f {
        for v in 0..in_f {
            let block = circulant_build_reference(&shared[u][v], l);
            for i in 0..d {
                for j in 0..d {
                    y[u * d + i] += block[i][j] * x[v * d + j];
                }
            }
        }
    }
    y
}

/// Matrix-free vector map convolution: for every (output axis `i`, input
/// axis `j`) pair, convolve input axis `j` with the kernels of shift
/// `(j − i) mod D` and accumulate with weight `l[i][j]`.
///
/// `shared` is `[C_out/D, C_in/D, D, kh, kw]`; channels are bundle-major.
pub fn vmap_conv_reference(x: &Tensor, shared: &Tensor, l: &[Vec<f64>], stride: usize, pad: usize) -> Tensor {
    let d = l.len();
    let [n, c_in, h, w] = dims4(x);
    let (bo, bi, kd, kh, kw) = match *shared.dims() {
        [a, b, c, e, f] => (a, b, c, e, f),
        _ => panic!("shared kernels must be rank 5"),
    };
    assert_eq!(kd, d);
    assert_eq!(bi * d, c_in);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros([n, bo * d, oh, ow]);
    for i in 0..d {
        for j in 0..d {
            let shift = (j + d - i) % d;
            let mut xj = Tensor::zeros([n, bi, h, w]);
            for b in 0..n {
                for v in 0..bi {
                    for y in 0..h {
                        for xx in 0..w {
                            xj.set(&[b, v, y, xx], x.at(&[b, v * d + j, y, xx]));
                        }
                    }
                }
            }
            let mut ks = Tensor::zeros([bo, bi, kh, kw]);
            for u in 0..bo {
                for v in 0..bi {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            ks.set(&[u, v, ky, kx], shared.at(&[u, v, shift, ky, kx]));
                        }
                    }
                }
            }
            let part = conv2d_reference(&xj, &ks, stride, pad);
            for b in 0..n {
                for u in 0..bo {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let idx = [b, u * d + i, y, xx];
                            let cur = out.at(&idx);
                            out.set(&idx, cur + l[i][j] * part.at(&[b, u, y, xx]));
                        }
                    }
                }
            }
        }
    }
    out
}

/// Complex multiplication `(a + bi)(c + di)`.
pub fn complex_mul(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

/// Complex convolution `(K_re + i K_im) ∗ (x_re + i x_im)` with separate
/// real/imaginary planes.
pub fn complex_conv_reference(
    x_re: &Tensor,
    x_im: &Tensor,
    k_re: &Tensor,
    k_im: &Tensor,
    stride: usize,
    pad: usize,
) -> (Tensor, Tensor) {
    let rr = conv2d_reference(x_re, k_re, stride, pad);
    let ii = conv2d_reference(x_im, k_im, stride, pad);
    let ri = conv2d_reference(x_re, k_im, stride, pad);
    let ir = conv2d_reference(x_im, k_re, stride, pad);
    let re = Tensor::from_vec(rr.dims().to_vec(), rr.data().iter().zip(ii.data()).map(|(a, b)| a - b).collect()).unwrap();
    let im = Tensor::from_vec(ri.dims().to_vec(), ri.data().iter().zip(ir.data()).map(|(a, b)| a + b).collect()).unwrap();
    (re, im)
}

/// Hamilton product `p ⊗ q` of quaternions `(r, i, j, k)`.
pub fn quaternion_mul(p: [f64; 4], q: [f64; 4]) -> [f64; 4] {
    let [a, b, c, d] = p;
    let [w, x, y, z] = q;
    [
        a * w - b * x - c * y - d * z,
        a * x + b * w + c * z - d * y,
        a * y - b * z + c * w + d * x,
        a * z + b * y - c * x + d * w,
    ]
}

/// Quaternion convolution `W ∗ h` with `W = A + iB + jC + kD` and
/// `h = w + ix + jy + kz`, each component given as its own plane.
pub fn quaternion_conv_reference(x: [&Tensor; 4], k: [&Tensor; 4], stride: usize, pad: usize) -> [Tensor; 4] {
    let conv = |ki: usize, xi: usize| conv2d_reference(x[xi], k[ki], stride, pad);
    // Terms of the Hamilton product, indexed [kernel][input].
    let mut t: Vec<Vec<Tensor>> = Vec::with_capacity(4);
    for ki in 0..4 {
        t.push((0..4).map(|xi| conv(ki, xi)).collect());
    }
    let combine = |terms: &[(f64, usize, usize)]| -> Tensor {
        let mut acc = Tensor::zeros_like(&t[0][0]);
        for &(sign, ki, xi) in terms {
            for (a, v) in acc.data_mut().iter_mut().zip(t[ki][xi].data()) {
                *a += sign * v;
            }
        }
        acc
    };
    let (a, b, c, d) = (0, 1, 2, 3);
    let (w, xx, y, z) = (0, 1, 2, 3);
    [
        combine(&[(1.0, a, w), (-1.0, b, xx), (-1.0, c, y), (-1.0, d, z)]),
        combine(&[(1.0, a, xx), (1.0, b, w), (1.0, c, z), (-1.0, d, y)]),
        combine(&[(1.0, a, y), (-1.0, b, z), (1.0, c, w), (1.0, d, xx)]),
        combine(&[(1.0, a, z), (1.0, b, y), (-1.0, c, xx), (1.0, d, w)]),
    ]
}

/// Central finite-difference gradient of `f` with respect to every element of
/// every tensor in `params`.
pub fn finite_diff_grad<F>(mut f: F, params: &[Tensor], eps: f64) -> Vec<Tensor>
where
    F: FnMut(&[Tensor]) -> f64,
{
    let mut work: Vec<Tensor> = params.to_vec();
    let mut grads = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let mut g = Tensor::zeros_like(&params[p]);
        for e in 0..params[p].numel() {
            let orig = work[p].data()[e];
            work[p].data_mut()[e] = orig + eps;
            let plus = f(&work);
            work[p].data_mut()[e] = orig - eps;
            let minus = f(&work);
            work[p].data_mut()[e] = orig;
            g.data_mut()[e] = (plus - minus) / (2.0 * eps);
        }
        grads.push(g);
    }
    grads
}

/// Norm-relative error `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute difference
/// norm when both are below `1e-12`.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.norm().max(b.norm());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}
