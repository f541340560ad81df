//! Fixtures shared by the benchmarks.

use turnpike_core::{DistributionSpec, Ensemble, EvolutionaryProblem, TimeGrid};

pub const TARGET: [f64; 2] = [4.0, 4.0];

pub fn oscillator(samples: usize) -> Ensemble {
    DistributionSpec::poisson_oscillator(samples, 42)
        .build()
        .expect("benchmark ensemble")
}

/// Benchmark problem from rest with zero terminal weight.
pub fn problem(samples: usize, horizon: f64, n_steps: usize) -> EvolutionaryProblem {
    let ens = oscillator(samples);
    let grid = TimeGrid::new(horizon, n_steps).expect("grid");
    let x0 = ens.zeros(ens.n());
    let phi = ens.zeros(ens.n());
    EvolutionaryProblem::new(ens, grid, x0, TARGET.to_vec(), phi).expect("problem")
}
