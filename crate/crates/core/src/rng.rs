//! Splittable, reproducible random streams.
//!
//! A stream is identified by `(seed, stream_id)` and backed by ChaCha8, whose
//! 64-bit stream selector gives independent sequences for distinct ids.
//! Parallel work never shares a stream: each unit of work derives its own
//! child with [`RngStream::split`], so results depend only on how work is
//! partitioned, never on thread scheduling.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform draw in `[0, 1)`; advances the stream.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Derives the child stream `index` of this stream.
    ///
    /// The child depends only on `(seed, stream_id, index)`, not on how far
    /// this stream has advanced.
    pub fn split(&self, index: u64) -> RngStream {
        RngStream::new(self.seed, mix(self.stream_id, index))
    }
}

impl RngCore for RngStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(parent: u64, index: u64) -> u64 {
    splitmix64(parent ^ splitmix64(index.wrapping_add(0x632B_E59B_D9B4_E019)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_advance() {
        let mut r = RngStream::new(1, 0);
        let a = r.uniform();
        let b = r.uniform();
        assert_ne!(a, b);
    }

    #[test]
    fn replay_is_identical() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        for _ in 0..1000 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn uniform_mean_law_of_large_numbers() {
        let mut r = RngStream::new(1, 0);
        let n = 1_000_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
            sum += u;
        }
        // sd of the mean is 1/sqrt(12 n) ≈ 2.9e-4, so 0.002 is ~7 sigma
        assert!((sum / n as f64 - 0.5).abs() < 0.002);
    }

    #[test]
    fn split_ignores_parent_position() {
        let parent = RngStream::new(11, 5);
        let mut advanced = parent.clone();
        for _ in 0..17 {
            advanced.uniform();
        }
        let mut c1 = parent.split(4);
        let mut c2 = advanced.split(4);
        assert_eq!(c1.uniform().to_bits(), c2.uniform().to_bits());
    }

    #[test]
    fn distinct_streams_are_uncorrelated() {
        let base = RngStream::new(3, 0);
        let mut a = base.split(0);
        let mut b = base.split(1);
        let n = 200_000;
        let (mut sa, mut sb, mut sab) = (0.0, 0.0, 0.0);
        let mut equal = 0;
        for _ in 0..n {
            let x = a.uniform();
            let y = b.uniform();
            if x == y {
                equal += 1;
            }
            sa += x;
            sb += y;
            sab += x * y;
        }
        let nf = n as f64;
        let cov = sab / nf - (sa / nf) * (sb / nf);
        let corr = cov / (1.0 / 12.0);
        // null sd of the sample correlation is 1/sqrt(n) ≈ 2.2e-3
        assert!(corr.abs() < 0.011, "corr = {corr}");
        assert_eq!(equal, 0);
    }
}
