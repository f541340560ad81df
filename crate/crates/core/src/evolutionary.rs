//! Time-dependent tracking problem with averaged observations.
//!
//! The discrete cost on node controls `u_0..u_N` is
//!
//! ```text
//! J(u) = ½ Σ_k h θ_k (‖u_k‖² + ‖𝔼[C x_k] − z‖²) + Σᵢ wᵢ (x_{i,N}, φ_T,ᵢ)
//! ```
//!
//! with trapezoid factors `θ_k`. It is an unconstrained strictly convex
//! quadratic; its gradient with respect to the h-weighted inner product
//! `⟨a, b⟩_h = h Σ_k (a_k, b_k)` comes from one forward and one adjoint sweep.

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    AdjointSweep, ControlTrajectory, EnsembleTrajectory, Propagator, Scheme, TimeGrid,
};
use crate::ensemble::{Ensemble, SampleVectors};
use crate::error::{Error, Result};
use crate::linalg::dot;

#[derive(Clone, Debug)]
pub struct EvolutionaryProblem {
    pub ens: Ensemble,
    pub grid: TimeGrid,
    pub x0: SampleVectors,
    pub z: Vec<f64>,
    pub phi_terminal: SampleVectors,
    pub scheme: Scheme,
}

impl EvolutionaryProblem {
    pub fn new(
        ens: Ensemble,
        grid: TimeGrid,
        x0: SampleVectors,
        z: Vec<f64>,
        phi_terminal: SampleVectors,
    ) -> Result<Self> {
        ens.check_sample_vectors(&x0, ens.n(), "x0")?;
        ens.check_sample_vectors(&phi_terminal, ens.n(), "phi_T")?;
        if z.len() != ens.p() {
            return Err(Error::DimensionMismatch(format!(
                "target z has dimension {}, expected {}",
                z.len(),
                ens.p()
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("target z is not finite".into()));
        }
        Ok(Self {
            ens,
            grid,
            x0,
            z,
            phi_terminal,
            scheme: Scheme::default(),
        })
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    /// Same data on a different grid.
    pub fn with_grid(&self, grid: TimeGrid) -> Self {
        Self {
            grid,
            ..self.clone()
        }
    }

    /// The problem with `x0 = 0`, `z = 0`, `φ_T = 0`; its gradient map is
    /// the linear part `H` of the original gradient.
    pub fn homogeneous(&self) -> Self {
        Self {
            x0: self.ens.zeros(self.ens.n()),
            z: vec![0.0; self.ens.p()],
            phi_terminal: self.ens.zeros(self.ens.n()),
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    BbArmijo,
    Cg,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub tol_rel_grad: f64,
    pub max_iters: usize,
    pub method: Method,
    pub armijo_c: f64,
    pub bb_min: f64,
    pub bb_max: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol_rel_grad: 1e-8,
            max_iters: 5000,
            method: Method::BbArmijo,
            armijo_c: 1e-4,
            bb_min: 1e-8,
            bb_max: 1e8,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_rel_grad > 0.0 && self.tol_rel_grad.is_finite()) {
            return Err(Error::InvalidInput("tol_rel_grad must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be positive".into()));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::InvalidInput("armijo_c must lie in (0, 1)".into()));
        }
        if !(self.bb_min > 0.0 && self.bb_min < self.bb_max && self.bb_max.is_finite()) {
            return Err(Error::InvalidInput(
                "Barzilai-Borwein bounds need 0 < bb_min < bb_max".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EvolutionarySolution {
    pub u: ControlTrajectory,
    pub x: EnsembleTrajectory,
    pub phi: EnsembleTrajectory,
    pub cost: f64,
    /// `‖g‖_h` at `u`.
    pub grad_norm: f64,
    /// `‖g‖_h` at `u = 0`.
    pub initial_grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost after every accepted iterate, starting with `u = 0`.
    pub cost_history: Vec<f64>,
}

struct Evaluator<'a> {
    problem: &'a EvolutionaryProblem,
    prop: Propagator<'a>,
}

impl<'a> Evaluator<'a> {
    fn new(problem: &'a EvolutionaryProblem) -> Result<Self> {
        Ok(Self {
            problem,
            prop: Propagator::new(&problem.ens, problem.grid, problem.scheme)?,
        })
    }

    fn check_control(&self, u: &ControlTrajectory) -> Result<()> {
        let g = &self.problem.grid;
        if u.dim() != self.problem.ens.m() || u.n_nodes() != g.n_nodes() {
            return Err(Error::GridMismatch(format!(
                "control has {} nodes of dim {}, expected {} of dim {}",
                u.n_nodes(),
                u.dim(),
                g.n_nodes(),
                self.problem.ens.m()
            )));
        }
        Ok(())
    }

    fn state(&self, u: &ControlTrajectory) -> Result<EnsembleTrajectory> {
        self.check_control(u)?;
        self.prop.forward(u, &self.problem.x0)
    }

    fn cost(&self, u: &ControlTrajectory, x: &EnsembleTrajectory) -> f64 {
        let p = self.problem;
        let grid = &p.grid;
        let running = grid.trapezoid((0..grid.n_nodes()).map(|k| {
            let mut y = p.ens.mean_observation(&x.node_values(k));
            for (yj, zj) in y.iter_mut().zip(&p.z) {
                *yj -= zj;
            }
            dot(u.node(k), u.node(k)) + dot(&y, &y)
        }));
        let terminal = p
            .ens
            .inner(&x.node_values(grid.n_steps()), &p.phi_terminal);
        0.5 * running + terminal
    }

    fn gradient(
        &self,
        u: &ControlTrajectory,
        x: &EnsembleTrajectory,
    ) -> Result<(ControlTrajectory, AdjointSweep)> {
        let p = self.problem;
        let sweep = self.prop.adjoint(x, &p.z, &p.phi_terminal)?;
        let mut g = ControlTrajectory::zeros(&p.grid, p.ens.m());
        for k in 0..p.grid.n_nodes() {
            let theta = p.grid.trapezoid_factor(k);
            let gk = g.node_mut(k);
            for (gj, uj) in gk.iter_mut().zip(u.node(k)) {
                *gj = theta * uj;
            }
            for (i, s) in p.ens.samples().iter().enumerate() {
                let bt = s.b.tr_matvec(&sweep.control_pairing(i, k));
                for (gj, v) in gk.iter_mut().zip(&bt) {
                    *gj += s.weight * v;
                }
            }
        }
        Ok((g, sweep))
    }
}

/// `J(u)` for the discretized problem.
pub fn cost(p: &EvolutionaryProblem, u: &ControlTrajectory) -> Result<f64> {
    let ev = Evaluator::new(p)?;
    let x = ev.state(u)?;
    Ok(ev.cost(u, &x))
}

/// Exact gradient of the discrete cost under the h-weighted inner product.
/// At node `k` it equals `θ_k (u_k + 𝔼[Bᵀ φ_k])` for the midpoint scheme.
pub fn gradient(p: &EvolutionaryProblem, u: &ControlTrajectory) -> Result<ControlTrajectory> {
    let ev = Evaluator::new(p)?;
    let x = ev.state(u)?;
    Ok(ev.gradient(u, &x)?.0)
}

pub fn solve_evolutionary(
    p: &EvolutionaryProblem,
    opts: &SolverOptions,
) -> Result<EvolutionarySolution> {
    match opts.method {
        Method::BbArmijo => solve_bb_armijo(p, opts),
        Method::Cg => solve_kkt_oracle(p, opts),
    }
}

/// Barzilai-Borwein steps safeguarded by Armijo backtracking, from `u = 0`.
///
/// The sufficient-decrease test uses the exact quadratic identity
/// `J(u − αg) − J(u) = −½α(⟨g, g⟩_h + ⟨g, g⁺⟩_h)`, where `g⁺` is the gradient
/// at the trial point, so the test stays meaningful once the decrease falls
/// below the rounding level of `J` itself.
fn solve_bb_armijo(p: &EvolutionaryProblem, opts: &SolverOptions) -> Result<EvolutionarySolution> {
    opts.validate()?;
    let ev = Evaluator::new(p)?;
    let h = p.grid.step();

    let mut u = ControlTrajectory::zeros(&p.grid, p.ens.m());
    let mut x = ev.state(&u)?;
    let mut j = ev.cost(&u, &x);
    let (mut g, mut sweep) = ev.gradient(&u, &x)?;
    let g0 = g.norm_h(h);
    let target = opts.tol_rel_grad * g0.max(1.0);
    let mut history = vec![j];

    let mut step: f64 = 1.0;
    let mut iterations = 0;
    let mut converged = g0 <= target;
    while !converged && iterations < opts.max_iters {
        let gg = g.dot_h(&g, h);
        let mut alpha = step.clamp(opts.bb_min, opts.bb_max);
        let mut accepted = None;
        for _ in 0..80 {
            let trial = u.add_scaled(-alpha, &g);
            let xt = ev.state(&trial)?;
            let (gt, st) = ev.gradient(&trial, &xt)?;
            let decrease = -0.5 * alpha * (gg + g.dot_h(&gt, h));
            if decrease <= -opts.armijo_c * alpha * gg {
                accepted = Some((trial, xt, gt, st));
                break;
            }
            alpha *= 0.5;
        }
        let Some((un, xn, gn, sn)) = accepted else {
            break;
        };
        iterations += 1;

        let s = un.add_scaled(-1.0, &u);
        let y = gn.add_scaled(-1.0, &g);
        let sy = s.dot_h(&y, h);
        step = if sy > 0.0 {
            s.dot_h(&s, h) / sy
        } else {
            opts.bb_max
        };

        u = un;
        x = xn;
        g = gn;
        sweep = sn;
        j = ev.cost(&u, &x);
        history.push(j);
        converged = g.norm_h(h) <= target;
    }

    let solution = EvolutionarySolution {
        grad_norm: g.norm_h(h),
        initial_grad_norm: g0,
        phi: sweep.nodes(),
        u,
        x,
        cost: j,
        iterations,
        converged,
        cost_history: history,
    };
    if converged {
        Ok(solution)
    } else {
        Err(Error::MaxItersExceeded {
            best: Box::new(solution),
        })
    }
}

/// Relative residual target of the conjugate-gradient oracle.
pub const CG_TOL: f64 = 1e-12;

/// Matrix-free conjugate gradient on `H u = −b`, where `b = gradient(0)` and
/// `H v = gradient(v) − gradient(0)` is evaluated on the homogeneous problem.
pub fn solve_kkt_oracle(
    p: &EvolutionaryProblem,
    opts: &SolverOptions,
) -> Result<EvolutionarySolution> {
    opts.validate()?;
    let h = p.grid.step();
    let ev = Evaluator::new(p)?;
    let hom = p.homogeneous();
    let hom_ev = Evaluator::new(&hom)?;
    let apply = |v: &ControlTrajectory| -> Result<ControlTrajectory> {
        let xv = hom_ev.state(v)?;
        Ok(hom_ev.gradient(v, &xv)?.0)
    };

    let zero = ControlTrajectory::zeros(&p.grid, p.ens.m());
    let x_zero = ev.state(&zero)?;
    let j_zero = ev.cost(&zero, &x_zero);
    let b = ev.gradient(&zero, &x_zero)?.0;
    let b_norm = norm_flat(&b);

    let mut u = zero.clone();
    let mut r = b.scaled(-1.0);
    let mut d = r.clone();
    let mut rr = dot(r.as_slice(), r.as_slice());
    let max_cg = 10 * b.as_slice().len().max(1);
    let mut iterations = 0;
    while rr.sqrt() > CG_TOL * b_norm {
        if iterations >= max_cg {
            return Err(Error::CgStalled {
                iterations,
                residual: rr.sqrt() / b_norm,
            });
        }
        let hd = apply(&d)?;
        let curvature = dot(d.as_slice(), hd.as_slice());
        if !(curvature > 0.0) {
            return Err(Error::CgStalled {
                iterations,
                residual: rr.sqrt() / b_norm,
            });
        }
        let alpha = rr / curvature;
        u = u.add_scaled(alpha, &d);
        r = r.add_scaled(-alpha, &hd);
        let rr_new = dot(r.as_slice(), r.as_slice());
        d = r.add_scaled(rr_new / rr, &d);
        rr = rr_new;
        iterations += 1;
    }

    let x = ev.state(&u)?;
    let j = ev.cost(&u, &x);
    let (g, sweep) = ev.gradient(&u, &x)?;
    Ok(EvolutionarySolution {
        grad_norm: g.norm_h(h),
        initial_grad_norm: b.norm_h(h),
        phi: sweep.nodes(),
        u,
        x,
        cost: j,
        iterations,
        converged: true,
        cost_history: vec![j_zero, j],
    })
}

fn norm_flat(v: &ControlTrajectory) -> f64 {
    dot(v.as_slice(), v.as_slice()).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::DistributionSpec;
    use crate::linalg::Matrix;

    fn zero_problem() -> EvolutionaryProblem {
        let ens = DistributionSpec::bernoulli_pair().build().unwrap();
        let grid = TimeGrid::new(2.0, 20).unwrap();
        let zeros = ens.zeros(1);
        EvolutionaryProblem::new(ens, grid, zeros.clone(), vec![0.0], zeros).unwrap()
    }

    #[test]
    fn zero_data_zero_cost_and_gradient() {
        let p = zero_problem();
        let u = ControlTrajectory::zeros(&p.grid, 1);
        assert_eq!(cost(&p, &u).unwrap(), 0.0);
        assert!(gradient(&p, &u).unwrap().as_slice().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn cost_is_quadratic_homogeneous() {
        let p = zero_problem();
        let mut u = ControlTrajectory::zeros(&p.grid, 1);
        for (k, v) in u.as_mut_slice().iter_mut().enumerate() {
            *v = (k as f64 * 0.7).sin();
        }
        let c1 = cost(&p, &u).unwrap();
        let c2 = cost(&p, &u.scaled(2.0)).unwrap();
        assert!((c2 - 4.0 * c1).abs() <= 1e-12 * c2.abs());
    }

    #[test]
    fn zero_data_oracle_returns_zero() {
        let p = zero_problem();
        let sol = solve_kkt_oracle(&p, &SolverOptions::default()).unwrap();
        assert!(sol.u.as_slice().iter().all(|v| *v == 0.0));
        let sol = solve_evolutionary(&p, &SolverOptions::default()).unwrap();
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn options_validation() {
        let bad = SolverOptions {
            tol_rel_grad: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverOptions {
            bb_min: 1.0,
            bb_max: 0.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let parsed: SolverOptions = serde_json::from_str(r#"{"method":"cg"}"#).unwrap();
        assert_eq!(parsed.method, Method::Cg);
        assert_eq!(parsed.max_iters, 5000);
    }

    #[test]
    fn max_iters_returns_best_iterate() {
        let ens = Ensemble::single(Matrix::scalar(1.0), Matrix::scalar(3.0), Matrix::scalar(2.0))
            .unwrap();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let p = EvolutionaryProblem::new(ens, grid, vec![vec![1.0]], vec![2.0], vec![vec![0.5]])
            .unwrap();
        let opts = SolverOptions {
            max_iters: 1,
            tol_rel_grad: 1e-14,
            ..Default::default()
        };
        match solve_evolutionary(&p, &opts) {
            Err(Error::MaxItersExceeded { best }) => {
                assert!(!best.converged);
                assert_eq!(best.iterations, 1);
                assert!(best.cost < best.cost_history[0]);
            }
            other => panic!("expected MaxItersExceeded, got {other:?}"),
        }
    }
}
