mod common;

use common::*;
use proptest::prelude::*;
use turnpike_core::*;

fn random_symmetric(rng: &mut RngState, n: usize) -> Matrix {
    normal_matrix(rng, n, n, 1.0).sym_part()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn jacobi_min_eigenvalue_matches_inertia_bisection(seed in any::<u64>(), n in 1usize..9) {
        let mut rng = RngState::new(seed);
        let s = random_symmetric(&mut rng, n);
        let (lam, v) = sym_eig_min(&s).unwrap();
        prop_assert!((lam - min_eig_bisect(&s)).abs() <= 1e-10);
        let sv = s.matvec(&v);
        let res: Vec<f64> = sv.iter().zip(&v).map(|(a, b)| a - lam * b).collect();
        prop_assert!(linalg::norm(&res) <= 1e-10);
        prop_assert!((linalg::norm(&v) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn jacobi_spectrum_counts(seed in any::<u64>(), n in 2usize..8) {
        let mut rng = RngState::new(seed);
        let s = random_symmetric(&mut rng, n);
        let eig = sym_eig(&s).unwrap();
        for w in eig.values.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
        // k eigenvalues lie strictly below the midpoint of λ_k and λ_{k+1}
        for k in 0..n - 1 {
            let gap = eig.values[k + 1] - eig.values[k];
            if gap > 1e-8 {
                let mid = 0.5 * (eig.values[k] + eig.values[k + 1]);
                prop_assert_eq!(count_below(&s, mid), k + 1);
            }
        }
    }

    #[test]
    fn lu_residual(seed in any::<u64>(), n in 1usize..10) {
        let mut rng = RngState::new(seed);
        let a = Matrix::identity(n).scaled(3.0).add(&normal_matrix(&mut rng, n, n, 1.0));
        let b = normal_vec(&mut rng, n);
        let lu = Lu::factor(&a).unwrap();
        let x = lu.solve(&b);
        let r: Vec<f64> = a.matvec(&x).iter().zip(&b).map(|(p, q)| p - q).collect();
        prop_assert!(linalg::norm(&r) <= 1e-12 * (1.0 + linalg::norm(&b)));
        let xt = lu.solve_transpose(&b);
        let rt: Vec<f64> = a.tr_matvec(&xt).iter().zip(&b).map(|(p, q)| p - q).collect();
        prop_assert!(linalg::norm(&rt) <= 1e-12 * (1.0 + linalg::norm(&b)));
    }

    #[test]
    fn pade_exponential_matches_taylor(seed in any::<u64>(), n in 1usize..5, t in 0.0f64..3.0) {
        let mut rng = RngState::new(seed);
        let a = normal_matrix(&mut rng, n, n, 1.0);
        let e1 = mat_exp(&a, t);
        let e2 = exp_taylor(&a, t);
        let scale = e2.max_abs().max(1.0);
        prop_assert!(e1.sub(&e2).max_abs() <= 1e-11 * scale);
    }
}

#[test]
fn exponential_semigroup() {
    let mut rng = RngState::new(31);
    let a = normal_matrix(&mut rng, 3, 3, 1.0);
    let lhs = mat_exp(&a, 0.7).matmul(&mat_exp(&a, 1.1));
    let rhs = mat_exp(&a, 1.8);
    assert!(lhs.sub(&rhs).max_abs() <= 1e-12 * rhs.max_abs().max(1.0));
}

#[test]
fn poisson_sample_mean() {
    let mut rng = RngState::new(2024);
    let n = 100_000;
    let mean = (0..n).map(|_| rng.poisson(5.0).unwrap() as f64).sum::<f64>() / n as f64;
    assert!((mean - 5.0).abs() <= 0.1, "{mean}");
}

#[test]
fn seeded_ensemble_is_reproducible() {
    let a = DistributionSpec::poisson_oscillator(200, 42).build().unwrap();
    let b = DistributionSpec::poisson_oscillator(200, 42).build().unwrap();
    assert_eq!(a, b);
    let c = DistributionSpec::poisson_oscillator(200, 43).build().unwrap();
    assert_ne!(a, c);
    let total: f64 = a.weights().sum();
    assert!((total - 1.0).abs() <= 1e-12);
}
