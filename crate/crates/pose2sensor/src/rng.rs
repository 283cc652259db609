//! Named, seedable random streams.
//!
//! Every source of randomness in the pipeline (init, dropout, data shuffling,
//! synthetic generation) draws from its own labeled stream so that consuming
//! one stream never shifts another. A stream is keyed by (seed, label): the
//! ChaCha key is derived by hashing both, which makes draw sequences identical
//! across platforms and independent between labels.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// One independent random stream.
pub struct StreamRng {
    inner: ChaCha8Rng,
    seed: u64,
    label: String,
}

impl StreamRng {
    pub fn new(seed: u64, label: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(label.as_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        StreamRng {
            inner: ChaCha8Rng::from_seed(key),
            seed,
            label: label.to_string(),
        }
    }

    /// A stream with the same seed under a derived label (`"<label>/<sub>"`).
    pub fn substream(&self, sub: &str) -> Self {
        StreamRng::new(self.seed, &format!("{}/{}", self.label, sub))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn uniform_f64(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Bernoulli draw: true with probability p, from a single 32-bit word.
    pub fn coin(&mut self, p: f64) -> bool {
        debug_assert!((0.0..=1.0).contains(&p));
        let threshold = (p * (1u64 << 32) as f64).round() as u64;
        (self.inner.next_u32() as u64) < threshold
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // Rejection sampling keeps the distribution exact.
        let zone = u64::MAX - (u64::MAX % n as u64);
        loop {
            let v = self.inner.next_u64();
            if v < zone {
                return (v % n as u64) as usize;
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for StreamRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}
