mod common;

use common::*;
use proptest::prelude::*;
use turnpike_core::*;

fn fd_check(p: &EvolutionaryProblem, rng: &mut RngState, coords: usize) -> f64 {
    let h = p.grid.step();
    let u = random_control(rng, &p.grid, p.ens.m());
    let g = gradient(p, &u).unwrap();
    let scale = g.as_slice().iter().fold(0.0f64, |a, v| a.max(h * v.abs()));
    let mut worst = 0.0f64;
    for _ in 0..coords {
        let idx = (rng.next_u64() % u.as_slice().len() as u64) as usize;
        let eps = 1e-5;
        let mut up = u.clone();
        up.as_mut_slice()[idx] += eps;
        let mut dn = u.clone();
        dn.as_mut_slice()[idx] -= eps;
        let fd = (cost(p, &up).unwrap() - cost(p, &dn).unwrap()) / (2.0 * eps);
        let an = h * g.as_slice()[idx];
        worst = worst.max((fd - an).abs() / an.abs().max(1e-3 * scale));
    }
    worst
}

#[test]
fn finite_differences_midpoint() {
    let mut rng = RngState::new(11);
    for _ in 0..5 {
        let p = random_problem(&mut rng, 3, 2, 2, 1.0, 40);
        assert!(fd_check(&p, &mut rng, 10) <= 1e-5);
    }
}

#[test]
fn finite_differences_backward_euler() {
    let mut rng = RngState::new(12);
    for _ in 0..5 {
        let p = random_problem(&mut rng, 2, 3, 1, 2.0, 30).with_scheme(Scheme::BackwardEuler);
        assert!(fd_check(&p, &mut rng, 10) <= 1e-5);
    }
}

#[test]
fn gradient_equals_node_adjoint_formula() {
    // g_k = θ_k (u_k + 𝔼[Bᵀ φ_k]) with φ from integrate_adjoint
    let mut rng = RngState::new(13);
    let p = random_problem(&mut rng, 4, 2, 2, 1.5, 25);
    let u = random_control(&mut rng, &p.grid, 2);
    let g = gradient(&p, &u).unwrap();
    let x = integrate_forward(&p.ens, &p.grid, &u, &p.x0).unwrap();
    let phi = integrate_adjoint(&p.ens, &p.grid, &x, &p.z, &p.phi_terminal).unwrap();
    for k in 0..p.grid.n_nodes() {
        let bt: SampleVectors = p
            .ens
            .samples()
            .iter()
            .enumerate()
            .map(|(i, s)| s.b.tr_matvec(phi.at(i, k)))
            .collect();
        let e = p.ens.expect(&bt).unwrap();
        let theta = p.grid.trapezoid_factor(k);
        for j in 0..2 {
            let expected = theta * (u.node(k)[j] + e[j]);
            assert!((g.node(k)[j] - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
        }
    }
}

#[test]
fn discrete_duality_pairing() {
    // x0 = 0, C = 0: Σ_k hθ_k (u_k, 𝔼[Bᵀφ_k]) = (x_N, φ_T)_w
    let mut rng = RngState::new(14);
    let base = random_ensemble(&mut rng, 3, 3, 2, 2, 1.0);
    let samples = base
        .samples()
        .iter()
        .map(|s| ParameterSample {
            c: Matrix::zeros(2, 3),
            ..s.clone()
        })
        .collect();
    let ens = Ensemble::new(samples).unwrap();
    let grid = TimeGrid::new(2.0, 50).unwrap();
    let u = random_control(&mut rng, &grid, 2);
    let phi_t = normal_samples(&mut rng, 3, 3);
    let x = integrate_forward(&ens, &grid, &u, &ens.zeros(3)).unwrap();
    let phi = integrate_adjoint(&ens, &grid, &x, &[0.0, 0.0], &phi_t).unwrap();
    let mut lhs = 0.0;
    for k in 0..grid.n_nodes() {
        let bt: SampleVectors = ens
            .samples()
            .iter()
            .enumerate()
            .map(|(i, s)| s.b.tr_matvec(phi.at(i, k)))
            .collect();
        let e = ens.expect(&bt).unwrap();
        lhs += grid.step() * grid.trapezoid_factor(k) * linalg::dot(u.node(k), &e);
    }
    let rhs = ens.inner(&x.node_values(grid.n_steps()), &phi_t);
    assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
}

#[test]
fn interior_adjoint_matches_time_reversed_forward() {
    // −φ' + Aᵀφ = Cᵀy run backward is x' + Aᵀx = Cᵀy' run forward in reversed time
    let mut rng = RngState::new(15);
    let p = random_problem(&mut rng, 3, 2, 1, 1.0, 30);
    let u = random_control(&mut rng, &p.grid, 1);
    let x = integrate_forward(&p.ens, &p.grid, &u, &p.x0).unwrap();
    let phi = integrate_adjoint(&p.ens, &p.grid, &x, &p.z, &p.phi_terminal).unwrap();

    let n = p.grid.n_steps();
    let h = p.grid.step();
    let reversed = Ensemble::new(
        p.ens
            .samples()
            .iter()
            .map(|s| ParameterSample {
                weight: s.weight,
                a: s.a.transpose(),
                b: s.c.transpose(),
                c: Matrix::identity(2),
            })
            .collect(),
    )
    .unwrap();
    let rgrid = TimeGrid::new(h * (n - 2) as f64, n - 2).unwrap();
    let source: Vec<Vec<f64>> = (0..=n - 2)
        .map(|j| {
            let mut y = p.ens.mean_observation(&x.node_values(n - 1 - j));
            for (a, b) in y.iter_mut().zip(&p.z) {
                *a -= b;
            }
            y
        })
        .collect();
    let v = ControlTrajectory::from_nodes(&source).unwrap();
    let start = phi.node_values(n - 1);
    let psi = integrate_forward(&reversed, &rgrid, &v, &start).unwrap();
    for i in 0..p.ens.len() {
        for j in 0..=n - 2 {
            let d = max_abs_diff(psi.at(i, j), phi.at(i, n - 1 - j));
            assert!(d <= 1e-10, "sample {i} node {j}: {d}");
        }
    }
}

#[test]
fn cost_matches_simpson_quadrature() {
    // the trapezoid cost and a Simpson re-evaluation agree to O(h²)
    let mut rng = RngState::new(16);
    let p = random_problem(&mut rng, 2, 2, 1, 1.0, 40);
    let grid = p.grid;
    let u = ControlTrajectory::from_nodes(
        &grid
            .nodes()
            .iter()
            .map(|t| vec![(3.0 * t).sin()])
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let x = integrate_forward(&p.ens, &grid, &u, &p.x0).unwrap();
    let f: Vec<f64> = (0..grid.n_nodes())
        .map(|k| {
            let mut y = p.ens.mean_observation(&x.node_values(k));
            for (a, b) in y.iter_mut().zip(&p.z) {
                *a -= b;
            }
            linalg::dot(u.node(k), u.node(k)) + linalg::dot(&y, &y)
        })
        .collect();
    let h = grid.step();
    let simpson: f64 = (0..grid.n_steps() / 2)
        .map(|j| h / 3.0 * (f[2 * j] + 4.0 * f[2 * j + 1] + f[2 * j + 2]))
        .sum();
    let terminal = p.ens.inner(&x.node_values(grid.n_steps()), &p.phi_terminal);
    let oracle = 0.5 * simpson + terminal;
    let j = cost(&p, &u).unwrap();
    assert!((j - oracle).abs() <= 5.0 * h * h * (1.0 + oracle.abs()), "{j} vs {oracle}");
}

#[test]
fn gradient_is_affine() {
    let mut rng = RngState::new(17);
    let p = random_problem(&mut rng, 3, 2, 2, 1.0, 20);
    let v = random_control(&mut rng, &p.grid, 2);
    let mut diffs = Vec::new();
    for _ in 0..2 {
        let u = random_control(&mut rng, &p.grid, 2);
        let a = gradient(&p, &u.add_scaled(1.0, &v)).unwrap();
        let b = gradient(&p, &u).unwrap();
        diffs.push(a.add_scaled(-1.0, &b));
    }
    assert!(max_abs_diff(diffs[0].as_slice(), diffs[1].as_slice()) <= 1e-11);
}

#[test]
fn hessian_symmetric_positive_definite() {
    let mut rng = RngState::new(18);
    let p = random_problem(&mut rng, 3, 2, 2, 1.0, 20);
    let hom = p.homogeneous();
    let h = p.grid.step();
    for _ in 0..10 {
        let v = random_control(&mut rng, &p.grid, 2);
        let w = random_control(&mut rng, &p.grid, 2);
        let hv = gradient(&hom, &v).unwrap();
        let hw = gradient(&hom, &w).unwrap();
        let vhw = w.dot_h(&hv, h);
        let whv = v.dot_h(&hw, h);
        assert!((vhw - whv).abs() <= 1e-10 * (1.0 + vhw.abs()));
        // the control term alone gives h Σ θ_k |v_k|²
        let floor: f64 = (0..p.grid.n_nodes())
            .map(|k| h * p.grid.trapezoid_factor(k) * linalg::dot(v.node(k), v.node(k)))
            .sum();
        assert!(v.dot_h(&hv, h) >= floor - 1e-10);
    }
}

#[test]
fn strict_convexity_modulus() {
    let mut rng = RngState::new(19);
    let p = random_problem(&mut rng, 2, 2, 1, 1.0, 20);
    let h = p.grid.step();
    for _ in 0..10 {
        let u1 = random_control(&mut rng, &p.grid, 1);
        let u2 = random_control(&mut rng, &p.grid, 1);
        let mid = u1.add_scaled(1.0, &u2).scaled(0.5);
        let d = u1.add_scaled(-1.0, &u2);
        let modulus: f64 = (0..p.grid.n_nodes())
            .map(|k| h * p.grid.trapezoid_factor(k) * linalg::dot(d.node(k), d.node(k)))
            .sum();
        let lhs = cost(&p, &mid).unwrap();
        let rhs = 0.5 * (cost(&p, &u1).unwrap() + cost(&p, &u2).unwrap()) - modulus / 8.0;
        assert!(lhs < rhs + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_map_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = RngState::new(seed);
        let ens = random_ensemble(&mut rng, 2, 2, 1, 2, 1.0);
        let grid = TimeGrid::new(1.0, 15).unwrap();
        let u1 = random_control(&mut rng, &grid, 1);
        let u2 = random_control(&mut rng, &grid, 1);
        let x1 = normal_samples(&mut rng, 2, 2);
        let x2 = normal_samples(&mut rng, 2, 2);
        let t1 = integrate_forward(&ens, &grid, &u1, &x1).unwrap();
        let t2 = integrate_forward(&ens, &grid, &u2, &x2).unwrap();
        let x0: SampleVectors = x1.iter().zip(&x2)
            .map(|(p, q)| p.iter().zip(q).map(|(s, t)| a * s + b * t).collect())
            .collect();
        let u = u1.scaled(a).add_scaled(b, &u2);
        let t = integrate_forward(&ens, &grid, &u, &x0).unwrap();
        for i in 0..2 {
            for k in 0..grid.n_nodes() {
                for j in 0..2 {
                    let lin = a * t1.at(i, k)[j] + b * t2.at(i, k)[j];
                    prop_assert!((t.at(i, k)[j] - lin).abs() <= 1e-12 * (1.0 + lin.abs()));
                }
            }
        }
    }

    #[test]
    fn cost_is_convex_along_lines(seed in any::<u64>(), s in 0.0f64..1.0) {
        let mut rng = RngState::new(seed);
        let p = random_problem(&mut rng, 2, 2, 1, 1.0, 12);
        let u1 = random_control(&mut rng, &p.grid, 1);
        let u2 = random_control(&mut rng, &p.grid, 1);
        let mix = u1.scaled(1.0 - s).add_scaled(s, &u2);
        let lhs = cost(&p, &mix).unwrap();
        let rhs = (1.0 - s) * cost(&p, &u1).unwrap() + s * cost(&p, &u2).unwrap();
        prop_assert!(lhs <= rhs + 1e-10 * (1.0 + rhs.abs()));
    }
}
