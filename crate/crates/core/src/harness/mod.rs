//! Experiment configs, seeded sweeps, rate fitting, CSV and SVG output.
//!
//! Every sweep cell `(N, rep)` with seed `s` draws from a ChaCha8 stream
//! seeded by `derive_seed(s, N, 0)`, so results do not depend on the order
//! or thread on which cells run.

pub mod config;
pub mod instances;
pub mod plot;
pub mod rates;
pub mod run;

pub use config::ExperimentConfig;
pub use instances::{build_instance, ExperimentInstance};
pub use rates::{fit_rate, RateFit};
pub use run::{run_experiment, ResultRow, ResultTable};

/// splitmix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream seed for cell `(a, b)` under `master`; independent of run order.
pub fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    mix(mix(mix(master) ^ a) ^ b)
}
