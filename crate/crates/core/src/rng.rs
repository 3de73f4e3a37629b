//! Seeded random streams. Every consumer derives a named sub-stream from one
//! run seed so stages stay reproducible independently of each other.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::math::{unit_vector_from_uniform, Vec3};

pub type StreamRng = ChaCha8Rng;

/// FNV-1a over the name, mixed with the seed through splitmix64.
pub fn substream_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(seed ^ h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn substream(seed: u64, name: &str) -> StreamRng {
    StreamRng::seed_from_u64(substream_seed(seed, name))
}

pub fn uniform_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    unit_vector_from_uniform(rng.gen::<f64>(), rng.gen::<f64>())
}

/// Uniform point in the ball of the given radius.
pub fn uniform_in_ball<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> Vec3 {
    let dir = uniform_unit_vector(rng);
    let r = radius * libm::cbrt(rng.gen::<f64>());
    dir * r
}

/// Standard normal sample (Box-Muller).
pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1 = 1.0 - rng.gen::<f64>();
    let u2 = rng.gen::<f64>();
    crate::math::sqrt(-2.0 * crate::math::ln(u1)) * crate::math::cos(2.0 * core::f64::consts::PI * u2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_streams_differ() {
        assert_ne!(substream_seed(7, "train"), substream_seed(7, "bake"));
        assert_eq!(substream_seed(7, "train"), substream_seed(7, "train"));
    }

    #[test]
    fn ball_samples_stay_inside() {
        let mut rng = substream(1, "ball");
        for _ in 0..1000 {
            assert!(uniform_in_ball(&mut rng, 1.9).norm() <= 1.9);
        }
    }
}
