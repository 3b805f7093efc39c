//! Counter-based random streams.
//!
//! Every consumer derives its own stream from `(master_seed, domain, index)`
//! instead of drawing from a shared generator, so output never depends on the
//! order in which work is scheduled.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Top-level stream families. The tag occupies the high 16 bits of the
/// ChaCha stream id; the per-family index occupies the low 48.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum StreamDomain {
    Train = 1,
    Test = 2,
    WeightInit = 3,
    Shuffle = 4,
    Dropout = 5,
    Augment = 6,
    Experiment = 7,
}

#[derive(Debug, Clone)]
pub struct RandomStream {
    inner: ChaCha8Rng,
}

impl RandomStream {
    pub fn derive(master_seed: u64, domain: StreamDomain, index: u64) -> Self {
        debug_assert!(index < 1 << 48);
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&master_seed.to_le_bytes());
        let mut inner = ChaCha8Rng::from_seed(key);
        inner.set_stream(((domain as u64) << 48) | (index & ((1 << 48) - 1)));
        Self { inner }
    }

    pub fn from_seed(seed: u64) -> Self {
        Self::derive(seed, StreamDomain::Experiment, 0)
    }

    /// Uniform in `[lo, hi]`; returns `lo` when the range is collapsed.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            lo
        } else {
            lo + (hi - lo) * self.inner.random::<f64>()
        }
    }

    pub fn unit(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        if p <= 0.0 {
            false
        } else if p >= 1.0 {
            true
        } else {
            self.inner.random::<f64>() < p
        }
    }

    /// Uniform integer in `[lo, hi]` inclusive.
    pub fn int_inclusive(&mut self, lo: u64, hi: u64) -> u64 {
        if hi <= lo {
            lo
        } else {
            self.inner.random_range(lo..=hi)
        }
    }

    pub fn index(&mut self, len: usize) -> usize {
        self.inner.random_range(0..len)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.inner.random_range(0..=i);
            items.swap(i, j);
        }
    }
}
