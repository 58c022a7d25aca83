//! Seeded, splittable random source.
//!
//! Draws come from a ChaCha stream; `split` derives child seeds from a
//! counter that is independent of how many samples were drawn, so sibling
//! streams never interact.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// SplitMix64 finalizer; decorrelates child seeds.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    splits: u64,
    stream: ChaCha8Rng,
}

impl Rng {
    pub fn from_seed(seed: u64) -> Self {
        Rng {
            seed,
            splits: 0,
            stream: ChaCha8Rng::seed_from_u64(mix64(seed)),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent child stream. The child's sequence depends
    /// only on this rng's seed and how many splits happened before, never
    /// on how many samples were drawn from it or its siblings.
    pub fn split(&mut self) -> Rng {
        self.splits += 1;
        let child_seed = mix64(self.seed ^ mix64(self.splits));
        Rng::from_seed(child_seed)
    }

    /// Uniform draw from [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.stream.gen::<f64>()
    }

    /// Uniform draw from [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.stream.gen_range(0..n)
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform().max(1e-300);
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Maps a uniform sample to standard Gumbel(0, 1): g = -ln(-ln u), with u
/// clamped away from the endpoints so every sample is finite.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(1e-12, 1.0 - 1e-12);
    -(-u.ln()).ln()
}

/// Row vector of `count` standard Gumbel samples.
pub fn gumbel_noise(rng: &mut Rng, count: usize) -> Tensor {
    let data: Vec<f64> = (0..count).map(|_| gumbel_from_uniform(rng.uniform())).collect();
    Tensor::from_vec(1, count, data)
}
