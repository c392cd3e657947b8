//! Reproducible random streams.
//!
//! The generator is xoshiro256** seeded through SplitMix64 (the reference
//! seeding procedure), so a given 64-bit seed yields the same stream on every
//! platform. Uniform floats take the top 53 bits of each output.

use rand::{Rng, RngCore, SeedableRng};
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256StarStar;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: Xoshiro256StarStar,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream identified by a fixed label.
    pub fn split(&self, label: &str) -> SeededRng {
        // FNV-1a over the label, mixed with the parent seed.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in label.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        SeededRng::new(splitmix64(self.seed ^ h))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn sign(&mut self) -> f64 {
        if self.next_u64() >> 63 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Chi-distributed draw with `dof` degrees of freedom and unit scale.
    pub fn chi(&mut self, dof: usize) -> f64 {
        let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
        dist.sample(&mut self.inner).sqrt()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Fisher–Yates shuffle of `items`.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn uniform_tensor(&mut self, dims: &[usize], lo: f64, hi: f64) -> Result<Tensor> {
        if !(lo < hi) {
            return Err(Error::InvalidArgument(format!("uniform bounds {lo} >= {hi}")));
        }
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| self.uniform(lo, hi)).collect();
        Tensor::from_vec(dims.to_vec(), data)
    }

    pub fn normal_tensor(&mut self, dims: &[usize], std: f64) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| std * self.normal()).collect();
        Tensor::from_vec(dims.to_vec(), data)
    }

    /// Tensor of values drawn uniformly from `{-1, +1}`.
    pub fn sign_tensor(&mut self, dims: &[usize]) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| self.sign()).collect();
        Tensor::from_vec(dims.to_vec(), data)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
