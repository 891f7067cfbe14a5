//! Seeded, named random streams.
//!
//! All randomness derives from one 64-bit seed. Consumers ask for a named
//! sub-stream (`"init"`, `"augment"`, ...) so that adding draws to one stream
//! never shifts the values another stream produces.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// ChaCha8 generator keyed by a seed and a stream path.
#[derive(Clone, Debug)]
pub struct RngState {
    seed: u64,
    path: String,
    rng: ChaCha8Rng,
}

// 64-bit FNV-1a; stable across platforms and releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self::with_path(seed, String::new())
    }

    fn with_path(seed: u64, path: String) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if !path.is_empty() {
            rng.set_stream(fnv1a(path.as_bytes()));
        }
        RngState { seed, path, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Stream path, `""` for the root stream.
    pub fn path(&self) -> &str {
        &self.path
    }

    /// Independent stream derived from the seed and `name`. The result does
    /// not depend on how many values have been drawn from `self`.
    pub fn substream(&self, name: &str) -> RngState {
        let path = if self.path.is_empty() { name.to_owned() } else { format!("{}/{}", self.path, name) };
        Self::with_path(self.seed, path)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform on `[lo, hi]`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn coin(&mut self) -> bool {
        self.rng.next_u32() & 1 == 1
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
