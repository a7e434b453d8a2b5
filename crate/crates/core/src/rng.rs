//! Seeded random streams.
//!
//! Every run draws from its own ChaCha stream selected by `(seed, stream)`, so
//! results do not depend on how runs are scheduled across threads.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::matnum::{Matrix, Vector};

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fills `out` with independent standard normals.
pub fn fill_standard_normal<R: Rng>(rng: &mut R, out: &mut [f64]) {
    for x in out.iter_mut() {
        *x = rng.sample(StandardNormal);
    }
}

/// Draws `factor · n` with `n ~ N(0, I)` into `out`; `scratch` must have as
/// many rows as `factor` has columns.
pub fn gaussian_into<R: Rng>(rng: &mut R, factor: &Matrix, scratch: &mut Vector, out: &mut Vector) {
    fill_standard_normal(rng, scratch.as_mut_slice());
    out.gemv(1.0, factor, scratch, 0.0);
}

/// Stream for the plant and sensor noise of run `run`. Plant streams live in
/// the upper half of the stream space so they never coincide with an
/// attacker's streams, even when both use the same seed.
pub fn plant_stream(seed: u64, run: u64) -> ChaCha8Rng {
    stream(seed, run | (1 << 63))
}
