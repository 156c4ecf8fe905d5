//! Deterministic parameter initialization.
//!
//! Every parameter gets its own stream keyed by (seed, name), so insertion
//! order never changes the initialized values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::array::{Array, Scalar};

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// RNG dedicated to one named parameter under a model seed.
pub fn param_rng(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ fnv1a(name)))
}

/// RNG for a purpose at a training step, derived statelessly so resumed runs
/// replay the identical stream.
pub fn step_rng(seed: u64, step: u64, purpose: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(step) ^ fnv1a(purpose)))
}

/// Uniform in `[lo, hi)`, sampled in f64 and narrowed, so the stream is the
/// same regardless of run precision.
pub fn uniform<S: Scalar>(rng: &mut ChaCha8Rng, dims: &[usize], lo: f64, hi: f64) -> Array<S> {
    Array::from_fn(dims, |_| S::of_f64(rng.gen_range(lo..hi)))
}

/// Glorot-style uniform in ±sqrt(6 / (fan_in + fan_out)).
pub fn glorot<S: Scalar>(rng: &mut ChaCha8Rng, dims: &[usize], fan_in: usize, fan_out: usize) -> Array<S> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    uniform(rng, dims, -bound, bound)
}
