use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic random source. The same seed yields the same draws on every
/// platform, so training runs are reproducible bit for bit.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// An independent generator for a numbered sub-stream of `seed`.
    pub fn derive(seed: u64, stream: &[u64]) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        // FNV-1a over the stream words.
        let id = stream
            .iter()
            .flat_map(|s| s.to_le_bytes())
            .fold(0xcbf2_9ce4_8422_2325u64, |acc, b| (acc ^ u64::from(b)).wrapping_mul(0x100_0000_01b3));
        inner.set_stream(id);
        SeededRng { seed, inner }
    }

    /// Uniform draw from `[0, 1)`.
    pub fn uniform01(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform draw from `[low, high)`.
    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        self.inner.gen_range(low..high)
    }

    /// Uniform integer from `[low, high)`.
    pub fn index(&mut self, low: usize, high: usize) -> usize {
        self.inner.gen_range(low..high)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}
