//! Reproducible random streams.
//!
//! Every stream is a xoshiro256++ generator whose state is expanded from a
//! 64-bit seed with SplitMix64. Uniform reals take the top 53 bits of one
//! output word, so sampled values are identical on every platform.

use rand::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

pub type StreamRng = Xoshiro256PlusPlus;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Independent stream for item `index` under a run-wide `seed`.
pub fn stream(seed: u64, index: u64) -> StreamRng {
    Xoshiro256PlusPlus::seed_from_u64(seed.wrapping_add(index.wrapping_mul(GOLDEN_GAMMA)))
}

/// Uniform in `[0, 1)`.
pub fn unit(rng: &mut StreamRng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in `[lo, hi)`.
pub fn uniform(rng: &mut StreamRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit(rng)
}

/// Uniform in the disk of radius `radius` around the origin.
pub fn in_disk(rng: &mut StreamRng, radius: f64) -> [f64; 2] {
    let r = radius * unit(rng).sqrt();
    let phi = std::f64::consts::TAU * unit(rng);
    [r * phi.cos(), r * phi.sin()]
}

/// Zero-mean normal sample; `sigma == 0` returns exactly zero without
/// consuming randomness.
pub fn gaussian(rng: &mut StreamRng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let z: f64 = StandardNormal.sample(rng);
    sigma * z
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| stream(42, 3).next_u64()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        assert_ne!(stream(42, 3).next_u64(), stream(42, 4).next_u64());
        assert_ne!(stream(42, 3).next_u64(), stream(43, 3).next_u64());
    }

    #[test]
    fn samplers_stay_in_range() {
        let mut rng = stream(1, 0);
        for _ in 0..1000 {
            let u = uniform(&mut rng, -2.0, 3.0);
            assert!((-2.0..3.0).contains(&u));
            let [x, y] = in_disk(&mut rng, 0.1);
            assert!(x.hypot(y) <= 0.1);
        }
        assert_eq!(gaussian(&mut rng, 0.0), 0.0);
    }
}
