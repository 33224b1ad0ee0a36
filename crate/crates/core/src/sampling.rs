//! Random-stream helpers shared by the simulator, the search and the evaluators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// The random stream used everywhere in the crate.
pub type SimRng = ChaCha8Rng;

/// Lowest value a truncated sample can take when every retry came out non-positive.
pub const POSITIVE_FLOOR: f64 = 1e-6;

const MAX_RETRIES: usize = 100;

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent child seed; used to give every evaluated state or
/// calibration combination its own stream.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finaliser over the pair
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Normal sample conditioned on being strictly positive.
///
/// A zero standard deviation returns the mean without touching the stream.
pub fn positive_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, std: f64) -> f64 {
    if std <= 0.0 {
        return if mean > 0.0 { mean } else { POSITIVE_FLOOR };
    }
    for _ in 0..MAX_RETRIES {
        let z: f64 = rng.sample(StandardNormal);
        let v = mean + std * z;
        if v > 0.0 {
            return v;
        }
    }
    POSITIVE_FLOOR
}
