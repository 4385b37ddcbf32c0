//! Seed derivation. Every stochastic stage owns a ChaCha stream derived from
//! a base seed plus stage-specific salts, so runs are bit-reproducible.

use rand::SeedableRng;

pub type Rng = rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Independent stream for `(seed, salts...)`.
pub fn derive(seed: u64, salts: &[u64]) -> Rng {
    let mut h = mix(seed);
    for &s in salts {
        h = mix(h ^ s);
    }
    Rng::seed_from_u64(h)
}

/// Uniform draw in `[0, 1)` built from 53 random bits.
pub fn unit(rng: &mut Rng) -> f64 {
    use rand::RngCore;
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform index in `0..n`.
pub fn below(rng: &mut Rng, n: usize) -> usize {
    use rand::Rng as _;
    rng.gen_range(0..n)
}

/// Fisher-Yates shuffle.
pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i + 1);
        items.swap(i, j);
    }
}

/// Standard normal via Box-Muller.
pub fn normal(rng: &mut Rng) -> f64 {
    loop {
        let u1 = unit(rng);
        if u1 > 0.0 {
            let u2 = unit(rng);
            return libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2);
        }
    }
}

/// Normal with standard deviation `std`, resampled outside two deviations.
pub fn truncated_normal(rng: &mut Rng, std: f64) -> f64 {
    loop {
        let z = normal(rng);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}
