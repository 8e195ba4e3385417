use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::pooling::RetainProb;
use crate::tensor::Tensor4;

/// Deterministic seeded random stream.
///
/// Every stochastic operation in the crate draws from one of these. A stream
/// is single-owner; code that fans out over batch examples must derive one
/// substream per example with [`RngStream::substream`] before going parallel.
/// Substream derivation depends only on the root seed and the index, never on
/// how much the parent has already drawn, so the same `(seed, index)` always
/// names the same sequence.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream identified by `index`.
    ///
    /// Children of distinct indices, and children of distinct parents, are
    /// statistically independent (seed mixing via splitmix64).
    pub fn substream(&self, index: u64) -> Self {
        let child_seed = splitmix64(self.seed ^ splitmix64(index.wrapping_add(0x9e37_79b9_7f4a_7c15)));
        Self::new(child_seed)
    }

    /// Uniform draw in [0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Bernoulli {0,1} tensor: each element is 1 with probability `p.p()`.
    pub fn bernoulli_mask(
        &mut self,
        shape: (usize, usize, usize, usize),
        p: RetainProb,
    ) -> Result<Tensor4> {
        let mut t = Tensor4::zeros(shape)?;
        let keep = p.p();
        for v in t.data_mut() {
            *v = if self.uniform() < keep { 1.0 } else { 0.0 };
        }
        Ok(t)
    }

    /// I.i.d. Gaussian tensor with the given mean and standard deviation.
    pub fn gaussian(
        &mut self,
        shape: (usize, usize, usize, usize),
        mean: f64,
        std: f64,
    ) -> Result<Tensor4> {
        if !(std >= 0.0) || !std.is_finite() || !mean.is_finite() {
            return Err(Error::Param(format!(
                "gaussian requires finite mean and std >= 0, got mean={mean}, std={std}"
            )));
        }
        let dist = Normal::new(mean, std)
            .map_err(|e| Error::Param(format!("gaussian parameters rejected: {e}")))?;
        let mut t = Tensor4::zeros(shape)?;
        for v in t.data_mut() {
            *v = dist.sample(&mut self.rng);
        }
        Ok(t)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = RngStream::new(42);
        let mut b = RngStream::new(42);
        for _ in 0..1000 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn substream_is_draw_independent() {
        let mut a = RngStream::new(7);
        let b = RngStream::new(7);
        // advancing the parent must not change what substream(i) names
        let _ = a.uniform();
        let mut c1 = a.substream(3);
        let mut c2 = b.substream(3);
        assert_eq!(c1.uniform().to_bits(), c2.uniform().to_bits());
        // distinct indices give distinct streams
        let mut d = b.substream(4);
        assert_ne!(c2.uniform().to_bits(), d.uniform().to_bits());
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut r = RngStream::new(1);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn bernoulli_p_one_never_zero() {
        let mut r = RngStream::new(5);
        let p = RetainProb::new(1.0).unwrap();
        let m = r.bernoulli_mask((1, 1, 10, 10), p).unwrap();
        assert!(m.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn bernoulli_half_fraction() {
        // 3 sigma of Binomial(1e6, 0.5) is ~0.0015, comfortably inside 0.002
        let mut r = RngStream::new(123);
        let p = RetainProb::new(0.5).unwrap();
        let m = r.bernoulli_mask((1, 1, 1, 1_000_000), p).unwrap();
        let frac = m.data().iter().sum::<f64>() / 1e6;
        assert!((0.498..=0.502).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn bernoulli_same_seed_identical() {
        let p = RetainProb::new(0.3).unwrap();
        let m1 = RngStream::new(9).bernoulli_mask((2, 1, 4, 4), p).unwrap();
        let m2 = RngStream::new(9).bernoulli_mask((2, 1, 4, 4), p).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn gaussian_zero_std_is_constant() {
        let mut r = RngStream::new(2);
        let t = r.gaussian((1, 1, 2, 2), 3.5, 0.0).unwrap();
        assert!(t.data().iter().all(|&v| v == 3.5));
    }

    #[test]
    fn gaussian_negative_std_rejected() {
        let mut r = RngStream::new(2);
        assert!(r.gaussian((1, 1, 1, 1), 0.0, -0.1).is_err());
    }

    #[test]
    fn gaussian_moments() {
        let mut r = RngStream::new(77);
        let t = r.gaussian((1, 1, 1, 1_000_000), 0.0, 0.1).unwrap();
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        assert!(mean.abs() < 0.0005, "mean {mean}");
        assert!((0.0995..=0.1005).contains(&std), "std {std}");
    }

    #[test]
    fn gaussian_same_seed_identical() {
        let a = RngStream::new(4).gaussian((1, 2, 3, 4), 1.0, 2.0).unwrap();
        let b = RngStream::new(4).gaussian((1, 2, 3, 4), 1.0, 2.0).unwrap();
        assert_eq!(a, b);
    }
}
