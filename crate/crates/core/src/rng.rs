//! Splittable, seedable random number generation.
//!
//! Every stochastic routine takes a [`SplitRng`] explicitly. Child streams are
//! derived from the parent seed and a stream index, so work fanned out across
//! threads draws from fixed streams regardless of scheduling.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Debug)]
pub struct SplitRng {
    seed: u64,
    splits: u64,
    inner: ChaCha8Rng,
}

impl SplitRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            splits: 0,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent stream keyed by `stream` without advancing `self`.
    pub fn derive(&self, stream: u64) -> SplitRng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        let seed = inner.next_u64();
        SplitRng::new(seed)
    }

    /// Returns the next child stream. Successive calls yield distinct streams.
    pub fn split(&mut self) -> SplitRng {
        self.splits += 1;
        // Mix in the parent's current state so splits after draws differ too.
        let salt = self.inner.next_u64();
        let mut child = self.derive(self.splits);
        child.seed ^= salt.rotate_left(17);
        child.inner = ChaCha8Rng::seed_from_u64(child.seed);
        child
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.inner.random_range(0..n)
    }
}

impl RngCore for SplitRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
