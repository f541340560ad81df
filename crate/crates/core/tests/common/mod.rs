#![allow(dead_code)]

use turnpike_core::{
    ControlTrajectory, DistributionSpec, Ensemble, EvolutionaryProblem, Matrix, ParameterSample,
    RngState, SampleVectors, TimeGrid,
};

pub fn normal_matrix(rng: &mut RngState, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * rng.next_normal()).collect();
    Matrix::from_row_major(rows, cols, data).unwrap()
}

pub fn normal_vec(rng: &mut RngState, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.next_normal()).collect()
}

pub fn normal_samples(rng: &mut RngState, len: usize, n: usize) -> SampleVectors {
    (0..len).map(|_| normal_vec(rng, n)).collect()
}

/// Random weights and `Aᵢ = shift·I + 0.5·G`, which keeps `Aᵢ` comfortably
/// invertible for the shifts used in the tests.
pub fn random_ensemble(
    rng: &mut RngState,
    len: usize,
    n: usize,
    m: usize,
    p: usize,
    shift: f64,
) -> Ensemble {
    let raw: Vec<f64> = (0..len).map(|_| 0.2 + rng.next_uniform()).collect();
    let total: f64 = raw.iter().sum();
    let samples = raw
        .iter()
        .map(|w| ParameterSample {
            weight: w / total,
            a: Matrix::identity(n)
                .scaled(shift)
                .add(&normal_matrix(rng, n, n, 0.5)),
            b: normal_matrix(rng, n, m, 1.0),
            c: normal_matrix(rng, p, n, 1.0),
        })
        .collect();
    Ensemble::new(samples).unwrap()
}

pub fn random_problem(
    rng: &mut RngState,
    len: usize,
    n: usize,
    m: usize,
    horizon: f64,
    n_steps: usize,
) -> EvolutionaryProblem {
    let ens = random_ensemble(rng, len, n, m, n, 1.5);
    let x0 = normal_samples(rng, len, n);
    let phi = normal_samples(rng, len, n);
    let z = normal_vec(rng, n);
    EvolutionaryProblem::new(ens, TimeGrid::new(horizon, n_steps).unwrap(), x0, z, phi).unwrap()
}

pub fn random_control(rng: &mut RngState, grid: &TimeGrid, m: usize) -> ControlTrajectory {
    let mut u = ControlTrajectory::zeros(grid, m);
    for v in u.as_mut_slice() {
        *v = rng.next_normal();
    }
    u
}

pub fn benchmark_ensemble() -> Ensemble {
    DistributionSpec::poisson_oscillator(200, 42).build().unwrap()
}

pub const BENCHMARK_Z: [f64; 2] = [4.0, 4.0];

pub fn benchmark_problem(horizon: f64, n_steps: usize) -> EvolutionaryProblem {
    let ens = benchmark_ensemble();
    let zeros = ens.zeros(2);
    EvolutionaryProblem::new(
        ens,
        TimeGrid::new(horizon, n_steps).unwrap(),
        zeros.clone(),
        BENCHMARK_Z.to_vec(),
        zeros,
    )
    .unwrap()
}

pub fn bernoulli() -> Ensemble {
    DistributionSpec::bernoulli_pair().build().unwrap()
}

/// Number of eigenvalues of the symmetric `s` below `lambda`, from the
/// signs of the pivots of an `LDLᵀ` factorization of `s − λI`.
pub fn count_below(s: &Matrix, lambda: f64) -> usize {
    let n = s.rows();
    let mut a: Vec<Vec<f64>> = s.to_rows();
    for (i, row) in a.iter_mut().enumerate() {
        row[i] -= lambda;
    }
    let mut negatives = 0;
    for k in 0..n {
        let mut d = a[k][k];
        if d == 0.0 {
            d = -1e-300;
        }
        if d < 0.0 {
            negatives += 1;
        }
        for i in k + 1..n {
            let f = a[i][k] / d;
            for j in k + 1..n {
                a[i][j] -= f * a[k][j];
            }
        }
    }
    negatives
}

/// Smallest eigenvalue by bisection on the inertia count.
pub fn min_eig_bisect(s: &Matrix) -> f64 {
    let bound = s.to_rows().iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max) + 1.0;
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if count_below(s, mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `e^{−tA}` by a long Taylor series with scaling and squaring.
pub fn exp_taylor(a: &Matrix, t: f64) -> Matrix {
    let n = a.rows();
    let norm = a.frobenius_norm() * t.abs();
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let x = a.scaled(-t / 2f64.powi(squarings));
    let mut term = Matrix::identity(n);
    let mut sum = Matrix::identity(n);
    for k in 1..40 {
        term = term.matmul(&x).scaled(1.0 / k as f64);
        sum = sum.add(&term);
    }
    for _ in 0..squarings {
        sum = sum.matmul(&sum);
    }
    sum
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
