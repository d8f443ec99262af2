//! Counter-based random streams.
//!
//! Every draw is addressed by `(seed, stream)` and a position inside the
//! stream, so the order in which batches or samples are produced can never
//! change what any individual draw sees. ChaCha8 supplies the counter mode;
//! Gaussians use Box-Muller through `libm` so results do not depend on the
//! platform's math library.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Purpose tags folded into stream ids so different consumers of one seed
/// never share a stream.
pub mod tag {
    pub const TRAIN_TIMESTEP: u64 = 1;
    pub const TRAIN_NOISE: u64 = 2;
    pub const TRAIN_DROPOUT: u64 = 3;
    pub const TRAIN_SHUFFLE: u64 = 4;
    pub const SAMPLE_NOISE: u64 = 5;
    pub const SAMPLE_ETA: u64 = 6;
    pub const INIT: u64 = 7;
    pub const SYNTH: u64 = 8;
    pub const GRADCHECK: u64 = 9;
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a purpose tag and two indices (e.g. step and sample) into one
/// stream id.
pub fn stream_id(tag: u64, a: u64, b: u64) -> u64 {
    splitmix(splitmix(splitmix(tag) ^ a) ^ b.rotate_left(17))
}

/// A ChaCha8 generator positioned at the start of `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform in the open interval `(0, 1)`, 53-bit resolution.
#[inline]
fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal source over a single stream.
pub struct GaussianStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self {
            rng: stream_rng(seed, stream),
            spare: None,
        }
    }

    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(v) = self.spare.take() {
            return v;
        }
        let u1 = open_unit(&mut self.rng);
        let u2 = open_unit(&mut self.rng);
        let r = libm::sqrt(-2.0 * libm::log(u1));
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * libm::sin(theta));
        r * libm::cos(theta)
    }

    pub fn fill(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.next_gaussian();
        }
    }
}

/// `len` unit Gaussians for `(seed, stream)`; identical for identical
/// arguments on every platform.
pub fn seeded_gaussian(len: usize, seed: u64, stream: u64) -> Vec<f64> {
    let mut out = vec![0.0; len];
    GaussianStream::new(seed, stream).fill(&mut out);
    out
}
