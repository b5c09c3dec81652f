//! Deterministic seeding and the noise samplers used by the randomized protocols.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a base seed with a list of stream coordinates (trial, node, time, ...).
///
/// The result depends on the order of `parts`, so `(node, t)` and `(t, node)`
/// address different streams.
pub fn mix_seed(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// Generator for one substream.
pub fn stream(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, parts))
}

/// Zero-mean Laplace sample with scale `b` (variance `2 b^2`) by inverse CDF.
pub fn laplace<R: Rng + ?Sized>(rng: &mut R, b: f64) -> f64 {
    let u: f64 = rng.sample::<f64, _>(rand::distr::Open01) - 0.5;
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}
