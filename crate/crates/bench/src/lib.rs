//! Shared fixtures for the kernel benchmarks.

use stochbench::instances::{generate_one, WishartSpec};
use stochbench::model::{SampleRecord, SampleSet};
use stochbench::{IsingInstance, ParameterPoint};

/// A planted instance of size `n` at `alpha = 0.5`.
pub fn instance(n: usize) -> IsingInstance {
    generate_one(&WishartSpec { n, alpha: 0.5, seed: 1, count: 1 }, 0).expect("valid spec").instance
}

/// A pool of `shots` unit-cost records with energies in `[optimal, 0]`.
pub fn pool(shots: usize, optimal: f64) -> SampleSet {
    use stochbench::rng::tag;
    let records = (0..shots)
        .map(|k| {
            let u = (stochbench::rng::derive(7, &[tag("pool"), k as u64]) >> 11) as f64 / (1u64 << 53) as f64;
            SampleRecord {
                energy: optimal * u,
                config: None,
                resource_cost: 1.0,
                shot_seed: k as u64,
                first_hit: 0,
                diverged: false,
            }
        })
        .collect();
    SampleSet::new("bench", "pt", ParameterPoint::new("pt", [("sweeps", 1.0)]), records).expect("non-empty")
}
