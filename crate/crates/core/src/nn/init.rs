use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::math;

/// Derives an independent stream seed for one parameter from the run seed.
///
/// Seeding per name keeps a parameter's initial value independent of which
/// other parameter groups a model variant allocates.
pub fn name_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    // splitmix64 finalizer
    let mut z = h ^ seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    math::sqrt(6.0 / (fan_in + fan_out) as f64)
}

/// Fills `out` with draws from U(-b, b), b = sqrt(6 / (fan_in + fan_out)).
pub fn xavier_uniform(out: &mut [f64], fan_in: usize, fan_out: usize, seed: u64, name: &str) {
    let bound = xavier_bound(fan_in, fan_out);
    let mut rng = ChaCha8Rng::seed_from_u64(name_seed(seed, name));
    for v in out {
        *v = rng.random_range(-bound..=bound);
    }
}
