//! Counter-based Gaussian streams.
//!
//! Every draw is addressed by `(seed, replicate, group, observation)`; the
//! value depends only on that tuple, so parallel schedules reproduce serial
//! ones bit for bit. Built on ChaCha8: the `(replicate, group)` pair selects
//! the ChaCha stream and the observation index selects the word position.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Words (u32) consumed per Gaussian draw: two u64 uniforms.
const WORDS_PER_DRAW: u128 = 4;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for a sub-task from a master seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(master), |acc, p| mix(acc ^ mix(*p)))
}

/// Stream index for a (replicate, group) pair; group 0 is the pooled placebo
/// arm, 1 and 2 the two groups.
fn stream_id(replicate: u64, group: u8) -> u64 {
    replicate.wrapping_mul(4).wrapping_add(u64::from(group))
}

fn uniform(word: u64) -> f64 {
    (word >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal by Box-Muller from two uniforms.
fn standard_normal(a: u64, b: u64) -> f64 {
    let u1 = 1.0 - uniform(a);
    let u2 = uniform(b);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Gaussian draws for one `(seed, replicate, group)` stream.
#[derive(Clone)]
pub struct GaussianStream {
    rng: ChaCha8Rng,
}

impl GaussianStream {
    pub fn new(seed: u64, replicate: u64, group: u8) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id(replicate, group));
        Self { rng }
    }

    /// Draw number `obs` of this stream from `N(mean, variance)`.
    pub fn draw(&mut self, obs: u64, mean: f64, variance: f64) -> f64 {
        self.rng.set_word_pos(u128::from(obs) * WORDS_PER_DRAW);
        self.next(mean, variance)
    }

    /// Fills `out` with draws `start, start + 1, ...`.
    pub fn fill(&mut self, start: u64, mean: f64, variance: f64, out: &mut [f64]) {
        self.rng.set_word_pos(u128::from(start) * WORDS_PER_DRAW);
        for v in out.iter_mut() {
            *v = self.next(mean, variance);
        }
    }

    fn next(&mut self, mean: f64, variance: f64) -> f64 {
        let a = self.rng.next_u64();
        let b = self.rng.next_u64();
        mean + variance.sqrt() * standard_normal(a, b)
    }
}

/// One draw addressed by the full counter tuple.
pub fn gaussian_sample(seed: u64, replicate: u64, group: u8, obs: u64, mean: f64, variance: f64) -> f64 {
    GaussianStream::new(seed, replicate, group).draw(obs, mean, variance)
}

/// Uniform generator for multistart jitter.
pub(crate) fn jitter_rng(seed: u64, start: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(start);
    rng
}
