//! Synthetic data-generating processes and the size, interval-length and
//! power experiments built on them.
//!
//! Every replicate derives its own seeds from the run seed, so results do not
//! depend on how replicates are scheduled across threads.

mod friedman;
mod mixture;

pub use friedman::{
    friedman_mean, gen_friedman, run_table3, run_table3_cell, FriedmanConfig, FriedmanSample, Stratum, Table3Config,
    Table3Row, UnitDraw, TABLE3_ENGINES,
};
pub use mixture::{figure1_config, gen_mixture, run_power, PowerArm, PowerConfig, PowerRow};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for the sub-task addressed by `path` under `seed`.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k.wrapping_add(1))))
}

pub(crate) fn rng_for(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_path() {
        let a = derive_seed(1, &[0, 0]);
        assert_ne!(a, derive_seed(1, &[0, 1]));
        assert_ne!(a, derive_seed(1, &[1, 0]));
        assert_ne!(a, derive_seed(2, &[0, 0]));
        assert_eq!(a, derive_seed(1, &[0, 0]));
    }
}
