//! Deterministic random streams.
//!
//! Every stream is ChaCha20 keyed by the 64-bit seed (little-endian in the
//! first 8 key bytes, remaining 24 bytes zero), with the ChaCha stream id
//! selected by [`Stream`] and the word position starting at 0. Uniform
//! variates take the top 53 bits of each `u64` output; Gaussian variates are
//! produced by inverting the standard normal CDF at the midpoint of the
//! 53-bit cell, so a stream never depends on rejection sampling.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use statrs::distribution::{ContinuousCDF, Normal};

const INV_2_53: f64 = 1.0 / (1u64 << 53) as f64;

/// What a stream is used for. The numeric id is part of the reproducibility contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    TrainX,
    TrainNoise,
    TestX,
    TestNoise,
    CvFolds,
    MixtureMonteCarlo { degree: usize },
}

impl Stream {
    pub fn id(self) -> u64 {
        match self {
            Stream::TrainX => 0,
            Stream::TrainNoise => 1,
            Stream::TestX => 2,
            Stream::TestNoise => 3,
            Stream::CvFolds => 4,
            Stream::MixtureMonteCarlo { degree } => 1_000 + degree as u64,
        }
    }
}

pub struct StreamRng {
    inner: ChaCha20Rng,
    normal: Normal,
}

impl StreamRng {
    pub fn new(seed: u64, stream: Stream) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        let mut inner = ChaCha20Rng::from_seed(key);
        inner.set_stream(stream.id());
        StreamRng {
            inner,
            normal: Normal::standard(),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * INV_2_53
    }

    /// Uniform on [lo, hi].
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        (lo + (hi - lo) * self.uniform()).clamp(lo, hi)
    }

    pub fn standard_normal(&mut self) -> f64 {
        let u = ((self.next_u64() >> 11) as f64 + 0.5) * INV_2_53;
        self.normal.inverse_cdf(u)
    }

    pub fn below(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    /// Fisher-Yates shuffle driven by this stream.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
