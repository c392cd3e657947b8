//! Vector map weight structure.
//!
//! Channels are grouped bundle-major: channel `u·D + i` is axis `i` of bundle
//! `u`. For a pair of bundles the layer holds one `D`-vector of kernels
//! `W = [W_0, …, W_{D−1}]`, and the `D × D` block linking input axis `j` to
//! output axis `i` is
//!
//! ```text
//! l[i][j] · W[(j − i) mod D]
//! ```
//!
//! i.e. block-row `i` is `L[i, :] ⊙ τ^i(W)` with `τ` the circular right
//! shift. The same `L` is applied to every bundle pair of a layer.

mod checkpoint;
mod init;
mod layers;

use std::sync::Arc;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointEntry, MANIFEST_FILE};
pub use init::{glorot_real, init_weights, Criterion, InitSpec};
pub use layers::{
    Conv2d, ConvMode, Dense, ForwardPath, Layer, ParamRef, ParamRole, QuaternionConv2d, VectorMapConv2d,
    VectorMapDense,
};

use crate::autodiff::{block_gather_forward, scale_by_l_forward, BlockTable};
use crate::error::{Error, Result};
use crate::tensor::{SeededRng, Tensor};

/// Circular right shift by `k`: `result[i] = v[(i − k) mod D]`.
pub fn tau<T: Clone>(v: &[T], k: usize) -> Vec<T> {
    let d = v.len();
    if d == 0 {
        return Vec::new();
    }
    let k = k % d;
    (0..d).map(|i| v[(i + d - k) % d].clone()).collect()
}

/// How `L` is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LMode {
    /// Deterministic ±1 pattern.
    Pattern,
    /// Independent uniform draws from `{−1, +1}`.
    RandomSign,
}

impl LMode {
    pub fn name(self) -> &'static str {
        match self {
            LMode::Pattern => "pattern",
            LMode::RandomSign => "random-sign",
        }
    }

    pub fn parse(s: &str) -> Result<LMode> {
        match s {
            "pattern" => Ok(LMode::Pattern),
            "random-sign" | "random" => Ok(LMode::RandomSign),
            other => Err(Error::Config(format!("unknown l_mode {other:?} (pattern | random-sign)"))),
        }
    }
}

/// The learnable `D × D` coefficient matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LMatrix {
    values: Tensor,
}

impl LMatrix {
    /// `+1` where (1-based) `i = 1`, `i = j`, or `j ≡ 2i − 1 (mod D)`;
    /// `−1` elsewhere.
    pub fn pattern(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("D must be >= 1".into()));
        }
        let mut data = vec![-1.0; d * d];
        for i in 0..d {
            // 0-based form of j = 2i − 1 on 1-based indices
            let wrapped = (2 * i) % d;
            for j in 0..d {
                if i == 0 || i == j || j == wrapped {
                    data[i * d + j] = 1.0;
                }
            }
        }
        Ok(LMatrix {
            values: Tensor::from_vec([d, d], data)?,
        })
    }

    pub fn random_sign(d: usize, rng: &mut SeededRng) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("D must be >= 1".into()));
        }
        Ok(LMatrix {
            values: rng.sign_tensor(&[d, d])?,
        })
    }

    pub fn init(d: usize, mode: LMode, rng: &mut SeededRng) -> Result<Self> {
        match mode {
            LMode::Pattern => Self::pattern(d),
            LMode::RandomSign => Self::random_sign(d, rng),
        }
    }

    pub fn from_tensor(values: Tensor) -> Result<Self> {
        match *values.dims() {
            [a, b] if a == b => Ok(LMatrix { values }),
            _ => Err(Error::InvalidShape(format!("L must be square, got {}", values.shape()))),
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let d = rows.len();
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::from_tensor(Tensor::from_vec([d, data.len() / d.max(1)], data)?)
    }

    /// The fixed `D = 2` pattern that turns the layer into complex
    /// multiplication: `[[1, −1], [1, 1]]`.
    pub fn complex() -> Self {
        Self::from_rows(&[&[1.0, -1.0], &[1.0, 1.0]]).expect("2x2")
    }

    pub fn d(&self) -> usize {
        self.values.dims()[0]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.data()[i * self.d() + j]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.values
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor {
        &mut self.values
    }
}

/// Block table of the τ-circulant: block `(i, j)` holds component
/// `(j − i) mod D`.
pub fn circulant_table(d: usize) -> Result<BlockTable> {
    let comp = (0..d).flat_map(|i| (0..d).map(move |j| (j + d - i) % d)).collect();
    BlockTable::new(d, comp)
}

/// Block table of the Hamilton product: row `i`, column `j` holds the
/// quaternion component of the kernel multiplying input component `j`.
pub fn hamilton_table() -> BlockTable {
    BlockTable::new(4, vec![0, 1, 2, 3, 1, 0, 3, 2, 2, 3, 0, 1, 3, 2, 1, 0]).expect("static table")
}

/// Signs of the Hamilton product matching [`hamilton_table`].
pub fn hamilton_signs() -> Tensor {
    #[rustfmt::skip]
    let s = vec![
        1.0, -1.0, -1.0, -1.0,
        1.0,  1.0, -1.0,  1.0,
        1.0,  1.0,  1.0, -1.0,
        1.0, -1.0,  1.0,  1.0,
    ];
    Tensor::from_vec([4, 4], s).expect("4x4")
}

pub(crate) fn circulant(d: usize) -> Arc<BlockTable> {
    Arc::new(circulant_table(d).expect("d >= 1"))
}

/// Materializes the full kernel bank (conv, `shared` rank 5) or weight
/// matrix (dense, `shared` rank 3) from shared weights and `L`.
pub fn expand_weights(shared: &Tensor, l: &LMatrix) -> Result<Tensor> {
    let d = l.d();
    let table = circulant_table(d)?;
    match *shared.dims() {
        [out_f, in_f, kd] => {
            if kd != d {
                return Err(Error::Divisibility {
                    what: "shared weight components",
                    value: kd,
                    d,
                });
            }
            let as_conv = shared.reshape([out_f, in_f, d, 1, 1])?;
            let bank = scale_by_l_forward(&block_gather_forward(&as_conv, &table)?, l.tensor())?;
            bank.reshape([out_f * d, in_f * d])
        }
        [_, _, kd, _, _] => {
            if kd != d {
                return Err(Error::Divisibility {
                    what: "shared kernel components",
                    value: kd,
                    d,
                });
            }
            scale_by_l_forward(&block_gather_forward(shared, &table)?, l.tensor())
        }
        _ => Err(Error::InvalidShape(format!(
            "shared weights must be rank 3 (dense) or rank 5 (conv), got {}",
            shared.shape()
        ))),
    }
}

/// Unsigned block pattern (component index per block) of a table.
pub fn unsigned_pattern(table: &BlockTable) -> Vec<Vec<usize>> {
    let d = table.d();
    (0..d).map(|i| (0..d).map(|j| table.component(i, j)).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;

    #[test]
    fn tau_right_rotation() {
        assert_eq!(tau(&[1, 2, 3, 4], 1), vec![4, 1, 2, 3]);
        assert_eq!(tau(&[1, 2, 3, 4], 4), vec![1, 2, 3, 4]);
        assert_eq!(tau(&[1, 2, 3], 0), vec![1, 2, 3]);
    }

    #[test]
    fn l_pattern_d4_matches_printed_matrix() {
        let l = LMatrix::pattern(4).unwrap();
        #[rustfmt::skip]
        let expected = [
             1.0,  1.0, 1.0,  1.0,
            -1.0,  1.0, 1.0, -1.0,
             1.0, -1.0, 1.0, -1.0,
            -1.0, -1.0, 1.0,  1.0,
        ];
        assert_eq!(l.tensor().data(), &expected);
    }

    #[test]
    fn l_pattern_small_cases() {
        assert_eq!(LMatrix::pattern(1).unwrap().tensor().data(), &[1.0]);
        let l3 = LMatrix::pattern(3).unwrap();
        assert_eq!(l3.tensor().data(), &[1.0, 1.0, 1.0, -1.0, 1.0, 1.0, -1.0, 1.0, 1.0]);
        for d in 1..=16 {
            let l = LMatrix::pattern(d).unwrap();
            let reference = oracle::l_pattern_reference(d);
            for i in 0..d {
                for j in 0..d {
                    assert_eq!(l.get(i, j), reference[i][j], "d={d} ({i},{j})");
                }
            }
        }
        assert!(LMatrix::pattern(0).is_err());
    }

    #[test]
    fn expand_dense_d4_example() {
        let w = Tensor::from_vec([1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = expand_weights(&w, &LMatrix::pattern(4).unwrap()).unwrap();
        #[rustfmt::skip]
        let expected = [
             1.0,  2.0, 3.0,  4.0,
            -4.0,  1.0, 2.0, -3.0,
             3.0, -4.0, 1.0, -2.0,
            -2.0, -3.0, 4.0,  1.0,
        ];
        assert_eq!(m.data(), &expected);
        let y = m.matmul(&Tensor::full([4, 1], 1.0)).unwrap();
        assert_eq!(y.data(), &[10.0, -4.0, -2.0, 0.0]);
    }

    #[test]
    fn expand_dense_complex_example() {
        let w = Tensor::from_vec([1, 1, 2], vec![3.0, 4.0]).unwrap();
        let m = expand_weights(&w, &LMatrix::complex()).unwrap();
        let y = m.matmul(&Tensor::from_vec([2, 1], vec![1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[-5.0, 10.0]);
        assert_eq!(oracle::complex_mul((3.0, 4.0), (1.0, 2.0)), (-5.0, 10.0));
    }

    #[test]
    fn expand_d1_is_identity() {
        let w = Tensor::from_vec([2, 3, 1], (0..6).map(f64::from).collect()).unwrap();
        let m = expand_weights(&w, &LMatrix::pattern(1).unwrap()).unwrap();
        assert_eq!(m.data(), w.data());
        assert_eq!(m.dims(), &[2, 3]);
    }

    #[test]
    fn expand_rejects_component_mismatch() {
        let w = Tensor::zeros([1, 1, 3]);
        assert!(expand_weights(&w, &LMatrix::pattern(4).unwrap()).is_err());
    }

    #[test]
    fn hamilton_pattern_is_not_circulant() {
        let ham = unsigned_pattern(&hamilton_table());
        let circ = unsigned_pattern(&circulant_table(4).unwrap());
        assert_ne!(ham, circ);
        // Hamilton row 1 swaps components pairwise; no cyclic shift does that.
        assert_eq!(ham[1], vec![1, 0, 3, 2]);
        assert!((0..4).all(|k| tau(&[0usize, 1, 2, 3], k) != ham[1]));
    }

    #[test]
    fn hamilton_expansion_matches_quaternion_product() {
        // scalar kernels (A, B, C, D) applied to h = (w, x, y, z)
        let p = [0.5, -1.5, 2.0, 0.25];
        let h = [1.0, 2.0, -3.0, 0.5];
        let shared = Tensor::from_vec([1, 1, 4, 1, 1], p.to_vec()).unwrap();
        let bank = scale_by_l_forward(&block_gather_forward(&shared, &hamilton_table()).unwrap(), &hamilton_signs()).unwrap();
        let m = bank.reshape([4, 4]).unwrap();
        let y = m.matmul(&Tensor::from_vec([4, 1], h.to_vec()).unwrap()).unwrap();
        let q = oracle::quaternion_mul(p, h);
        for c in 0..4 {
            assert!((y.data()[c] - q[c]).abs() < 1e-14);
        }
    }
}
