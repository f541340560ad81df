//! Time integration of the ensemble state equation and its adjoint.
//!
//! The state equation `x' + A x = B u` is advanced per sample with a theta
//! scheme: implicit midpoint (θ = ½, the default) or backward Euler (θ = 1),
//!
//! ```text
//! (I + θhA) x_{k+1} = (I − (1−θ)hA) x_k + h B ((1−θ) u_k + θ u_{k+1})
//! ```
//!
//! Controls live on grid nodes. The adjoint is the exact transpose of this
//! discrete forward map for the trapezoidal cost, so adjoint gradients are
//! exact for the discretized problem.
//!
//! The transpose is carried by step multipliers `μ_1..μ_N`:
//!
//! ```text
//! (I + θhA)ᵀ μ_N = φ_T + h θ_N Cᵀ y_N
//! (I + θhA)ᵀ μ_k = (I − (1−θ)hA)ᵀ μ_{k+1} + h θ_k Cᵀ y_k,   k = N−1..1
//! ```
//!
//! with `y_k = 𝔼[C x_k] − z` and trapezoid factors `θ_k` (½ at the ends).
//! The node adjoint `φ_k` is the average of the two multipliers adjacent to
//! node `k`. For the midpoint scheme this makes `φ` satisfy, at interior
//! nodes, the midpoint rule for `−φ' + Aᵀφ = Cᵀ y` with the source sampled
//! at step midpoints, and it makes the gradient at node `k` equal to
//! `θ_k (u_k + 𝔼[Bᵀ φ_k])`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{Ensemble, SampleVectors};
use crate::error::{Error, Result};
use crate::linalg::{Lu, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "time horizon must be positive and finite, got {horizon}"
            )));
        }
        if n_steps < 2 {
            return Err(Error::InvalidInput(format!(
                "time grid needs at least 2 steps, got {n_steps}"
            )));
        }
        Ok(Self { horizon, n_steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        self.horizon * k as f64 / self.n_steps as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|k| self.node(k)).collect()
    }

    /// Trapezoid factor at node `k`, relative to `h`.
    pub fn trapezoid_factor(&self, k: usize) -> f64 {
        if k == 0 || k == self.n_steps {
            0.5
        } else {
            1.0
        }
    }

    /// `∫₀ᵀ f` by the trapezoid rule over node values.
    pub fn trapezoid(&self, values: impl IntoIterator<Item = f64>) -> f64 {
        self.step()
            * values
                .into_iter()
                .enumerate()
                .map(|(k, v)| self.trapezoid_factor(k) * v)
                .sum::<f64>()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    ImplicitMidpoint,
    BackwardEuler,
}

impl Scheme {
    pub fn theta(self) -> f64 {
        match self {
            Scheme::ImplicitMidpoint => 0.5,
            Scheme::BackwardEuler => 1.0,
        }
    }

    /// Weights of `(u_k, u_{k+1})` in the step source.
    fn control_weights(self) -> (f64, f64) {
        let t = self.theta();
        (1.0 - t, t)
    }
}

/// Parameter-independent control sampled on the grid nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlTrajectory {
    dim: usize,
    values: Vec<f64>,
}

impl ControlTrajectory {
    pub fn zeros(grid: &TimeGrid, dim: usize) -> Self {
        Self {
            dim,
            values: vec![0.0; grid.n_nodes() * dim],
        }
    }

    pub fn constant(grid: &TimeGrid, u: &[f64]) -> Self {
        Self {
            dim: u.len(),
            values: u.repeat(grid.n_nodes()),
        }
    }

    pub fn from_nodes(nodes: &[Vec<f64>]) -> Result<Self> {
        let dim = nodes.first().map_or(0, Vec::len);
        if nodes.iter().any(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch(
                "control nodes have differing dimensions".into(),
            ));
        }
        if nodes.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("control has non-finite entries".into()));
        }
        Ok(Self {
            dim,
            values: nodes.concat(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.values.len() / self.dim.max(1)
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn node_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn to_nodes(&self) -> Vec<Vec<f64>> {
        (0..self.n_nodes()).map(|k| self.node(k).to_vec()).collect()
    }

    /// `self + a·other`
    pub fn add_scaled(&self, a: f64, other: &ControlTrajectory) -> Self {
        assert_eq!(self.values.len(), other.values.len());
        Self {
            dim: self.dim,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| x + a * y)
                .collect(),
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            dim: self.dim,
            values: self.values.iter().map(|x| a * x).collect(),
        }
    }

    /// h-weighted inner product `h Σ_k (self_k, other_k)`.
    pub fn dot_h(&self, other: &ControlTrajectory, h: f64) -> f64 {
        h * crate::linalg::dot(&self.values, &other.values)
    }

    pub fn norm_h(&self, h: f64) -> f64 {
        self.dot_h(self, h).sqrt()
    }

    /// Time average `(1/T) ∫ u` by the trapezoid rule.
    pub fn time_average(&self, grid: &TimeGrid) -> Vec<f64> {
        (0..self.dim)
            .map(|j| grid.trapezoid((0..self.n_nodes()).map(|k| self.node(k)[j])) / grid.horizon())
            .collect()
    }
}

/// Per-sample vector trajectories on a shared grid.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleTrajectory {
    n_samples: usize,
    n_nodes: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EnsembleTrajectory {
    pub fn zeros(n_samples: usize, n_nodes: usize, dim: usize) -> Self {
        Self {
            n_samples,
            n_nodes,
            dim,
            data: vec![0.0; n_samples * n_nodes * dim],
        }
    }

    fn from_samples(per_sample: Vec<Vec<f64>>, n_nodes: usize, dim: usize) -> Self {
        let n_samples = per_sample.len();
        Self {
            n_samples,
            n_nodes,
            dim,
            data: per_sample.concat(),
        }
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, sample: usize, node: usize) -> &[f64] {
        let start = (sample * self.n_nodes + node) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn at_mut(&mut self, sample: usize, node: usize) -> &mut [f64] {
        let start = (sample * self.n_nodes + node) * self.dim;
        &mut self.data[start..start + self.dim]
    }

    /// All samples at one node.
    pub fn node_values(&self, node: usize) -> SampleVectors {
        (0..self.n_samples)
            .map(|i| self.at(i, node).to_vec())
            .collect()
    }

    /// Time average per sample, `(1/T) ∫ x(t, ωᵢ) dt` by the trapezoid rule.
    pub fn time_average(&self, grid: &TimeGrid) -> SampleVectors {
        (0..self.n_samples)
            .map(|i| {
                (0..self.dim)
                    .map(|j| {
                        grid.trapezoid((0..self.n_nodes).map(|k| self.at(i, k)[j]))
                            / grid.horizon()
                    })
                    .collect()
            })
            .collect()
    }

    fn check_grid(&self, ens: &Ensemble, grid: &TimeGrid, dim: usize) -> Result<()> {
        if self.n_samples != ens.len() || self.n_nodes != grid.n_nodes() || self.dim != dim {
            return Err(Error::GridMismatch(format!(
                "trajectory has {} samples x {} nodes x dim {}, expected {} x {} x {}",
                self.n_samples,
                self.n_nodes,
                self.dim,
                ens.len(),
                grid.n_nodes(),
                dim
            )));
        }
        Ok(())
    }
}

/// Step operators factored once per sample and reused for every step.
pub struct Propagator<'a> {
    ens: &'a Ensemble,
    grid: TimeGrid,
    scheme: Scheme,
    implicit: Vec<Lu>,
    explicit: Vec<Matrix>,
}

impl<'a> Propagator<'a> {
    pub fn new(ens: &'a Ensemble, grid: TimeGrid, scheme: Scheme) -> Result<Self> {
        let h = grid.step();
        let theta = scheme.theta();
        let n = ens.n();
        let eye = Matrix::identity(n);
        let mut implicit = Vec::with_capacity(ens.len());
        let mut explicit = Vec::with_capacity(ens.len());
        for (i, s) in ens.samples().iter().enumerate() {
            let lhs = eye.add(&s.a.scaled(theta * h));
            implicit.push(
                Lu::factor(&lhs).map_err(|_| Error::SingularStepMatrix { sample: i, step: h })?,
            );
            explicit.push(eye.sub(&s.a.scaled((1.0 - theta) * h)));
        }
        Ok(Self {
            ens,
            grid,
            scheme,
            implicit,
            explicit,
        })
    }

    pub fn ensemble(&self) -> &Ensemble {
        self.ens
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn forward(&self, u: &ControlTrajectory, x0: &[Vec<f64>]) -> Result<EnsembleTrajectory> {
        let ens = self.ens;
        let (n, m) = (ens.n(), ens.m());
        if u.dim() != m || u.n_nodes() != self.grid.n_nodes() {
            return Err(Error::GridMismatch(format!(
                "control has {} nodes of dim {}, expected {} of dim {m}",
                u.n_nodes(),
                u.dim(),
                self.grid.n_nodes()
            )));
        }
        ens.check_sample_vectors(x0, n, "x0")?;
        let h = self.grid.step();
        let (wa, wb) = self.scheme.control_weights();
        let nodes = self.grid.n_nodes();

        let per_sample: Vec<Vec<f64>> = (0..ens.len())
            .into_par_iter()
            .map(|i| {
                let s = &ens.samples()[i];
                let mut traj = Vec::with_capacity(nodes * n);
                traj.extend_from_slice(&x0[i]);
                let mut src = vec![0.0; m];
                for k in 0..self.grid.n_steps() {
                    let xk = &traj[k * n..(k + 1) * n];
                    let mut rhs = self.explicit[i].matvec(xk);
                    for ((sj, a), b) in src.iter_mut().zip(u.node(k)).zip(u.node(k + 1)) {
                        *sj = h * (wa * a + wb * b);
                    }
                    for (r, bu) in rhs.iter_mut().zip(s.b.matvec(&src)) {
                        *r += bu;
                    }
                    let next = self.implicit[i].solve(&rhs);
                    traj.extend_from_slice(&next);
                }
                traj
            })
            .collect();
        Ok(EnsembleTrajectory::from_samples(per_sample, nodes, n))
    }

    /// Exact discrete adjoint of the trapezoidal cost along the state `x`.
    pub fn adjoint(
        &self,
        x: &EnsembleTrajectory,
        z: &[f64],
        phi_terminal: &[Vec<f64>],
    ) -> Result<AdjointSweep> {
        let ens = self.ens;
        let n = ens.n();
        x.check_grid(ens, &self.grid, n)?;
        if z.len() != ens.p() {
            return Err(Error::DimensionMismatch(format!(
                "target z has dimension {}, expected {}",
                z.len(),
                ens.p()
            )));
        }
        ens.check_sample_vectors(phi_terminal, n, "phi_T")?;

        let h = self.grid.step();
        let nodes = self.grid.n_nodes();
        let steps = self.grid.n_steps();
        // sequential, fixed sample order
        let residuals: Vec<Vec<f64>> = (0..nodes)
            .map(|k| {
                let mut y = ens.mean_observation(&x.node_values(k));
                for (yj, zj) in y.iter_mut().zip(z) {
                    *yj -= zj;
                }
                y
            })
            .collect();

        let per_sample: Vec<Vec<f64>> = (0..ens.len())
            .into_par_iter()
            .map(|i| {
                let s = &ens.samples()[i];
                // multiplier k stored at slot k; slot 0 unused
                let mut mult = vec![0.0; nodes * n];
                let mut rhs = phi_terminal[i].clone();
                for (r, c) in rhs
                    .iter_mut()
                    .zip(s.c.tr_matvec(&residuals[steps]))
                {
                    *r += h * self.grid.trapezoid_factor(steps) * c;
                }
                let last = self.implicit[i].solve_transpose(&rhs);
                mult[steps * n..].copy_from_slice(&last);
                for k in (1..steps).rev() {
                    let next = &mult[(k + 1) * n..(k + 2) * n];
                    let mut rhs = self.explicit[i].tr_matvec(next);
                    for (r, c) in rhs.iter_mut().zip(s.c.tr_matvec(&residuals[k])) {
                        *r += h * c;
                    }
                    let mk = self.implicit[i].solve_transpose(&rhs);
                    mult[k * n..(k + 1) * n].copy_from_slice(&mk);
                }
                mult
            })
            .collect();

        Ok(AdjointSweep {
            multipliers: EnsembleTrajectory::from_samples(per_sample, nodes, n),
            scheme: self.scheme,
        })
    }
}

/// Step multipliers of the discrete adjoint.
#[derive(Clone, Debug)]
pub struct AdjointSweep {
    multipliers: EnsembleTrajectory,
    scheme: Scheme,
}

impl AdjointSweep {
    /// Multiplier of step `k−1 → k`, `k = 1..=N`.
    pub fn multiplier(&self, sample: usize, k: usize) -> &[f64] {
        assert!(k >= 1, "multipliers are indexed from 1");
        self.multipliers.at(sample, k)
    }

    /// `a μ_{k+1} + b μ_k` (absent terms dropped): the quantity paired with
    /// `B u_k` by the discrete dynamics.
    pub fn control_pairing(&self, sample: usize, k: usize) -> Vec<f64> {
        let (wa, wb) = self.scheme.control_weights();
        let last = self.multipliers.n_nodes() - 1;
        let n = self.multipliers.dim();
        let mut out = vec![0.0; n];
        if k < last {
            crate::linalg::axpy(wa, self.multipliers.at(sample, k + 1), &mut out);
        }
        if k > 0 {
            crate::linalg::axpy(wb, self.multipliers.at(sample, k), &mut out);
        }
        out
    }

    /// Node values of the adjoint state.
    pub fn nodes(&self) -> EnsembleTrajectory {
        let (wa, wb) = self.scheme.control_weights();
        let mult = &self.multipliers;
        let last = mult.n_nodes() - 1;
        let mut out = EnsembleTrajectory::zeros(mult.n_samples(), mult.n_nodes(), mult.dim());
        for i in 0..mult.n_samples() {
            for k in 0..=last {
                let wl = if k < last { wa } else { 0.0 };
                let wr = if k > 0 { wb } else { 0.0 };
                let dst = out.at_mut(i, k);
                if wl + wr == 0.0 {
                    // backward Euler at t = 0: nearest multiplier
                    dst.copy_from_slice(mult.at(i, 1));
                    continue;
                }
                if wl > 0.0 {
                    crate::linalg::axpy(wl / (wl + wr), mult.at(i, k + 1), dst);
                }
                if wr > 0.0 {
                    crate::linalg::axpy(wr / (wl + wr), mult.at(i, k), dst);
                }
            }
        }
        out
    }
}

/// Forward state trajectory for every sample.
pub fn integrate_forward(
    ens: &Ensemble,
    grid: &TimeGrid,
    u: &ControlTrajectory,
    x0: &[Vec<f64>],
) -> Result<EnsembleTrajectory> {
    integrate_forward_with(ens, grid, Scheme::default(), u, x0)
}

pub fn integrate_forward_with(
    ens: &Ensemble,
    grid: &TimeGrid,
    scheme: Scheme,
    u: &ControlTrajectory,
    x0: &[Vec<f64>],
) -> Result<EnsembleTrajectory> {
    Propagator::new(ens, *grid, scheme)?.forward(u, x0)
}

/// Node adjoint trajectory along the state `x`.
pub fn integrate_adjoint(
    ens: &Ensemble,
    grid: &TimeGrid,
    x: &EnsembleTrajectory,
    z: &[f64],
    phi_terminal: &[Vec<f64>],
) -> Result<EnsembleTrajectory> {
    Ok(Propagator::new(ens, *grid, Scheme::default())?
        .adjoint(x, z, phi_terminal)?
        .nodes())
}

/// Replaces each `Aᵢ` by `Aᵢ + KᵢCᵢ`.
pub fn closed_loop_ensemble(ens: &Ensemble, gains: &[Matrix]) -> Result<Ensemble> {
    if gains.len() != ens.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} gains for {} samples",
            gains.len(),
            ens.len()
        )));
    }
    let samples = ens
        .samples()
        .iter()
        .zip(gains)
        .enumerate()
        .map(|(i, (s, k))| {
            if k.rows() != ens.n() || k.cols() != ens.p() {
                return Err(Error::DimensionMismatch(format!(
                    "gain {i} is {}x{}, expected {}x{}",
                    k.rows(),
                    k.cols(),
                    ens.n(),
                    ens.p()
                )));
            }
            let mut s = s.clone();
            s.a = s.a.add(&k.matmul(&s.c));
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ensemble::new(samples)
}

/// Free response of `x' + (A + KC)x = 0`.
pub fn closed_loop_forward(
    ens: &Ensemble,
    gains: &[Matrix],
    grid: &TimeGrid,
    x0: &[Vec<f64>],
) -> Result<EnsembleTrajectory> {
    let closed = closed_loop_ensemble(ens, gains)?;
    let u = ControlTrajectory::zeros(grid, ens.m());
    integrate_forward(&closed, grid, &u, x0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::DistributionSpec;
    use approx::assert_abs_diff_eq;

    fn scalar(a: f64, b: f64, c: f64) -> Ensemble {
        Ensemble::single(Matrix::scalar(a), Matrix::scalar(b), Matrix::scalar(c)).unwrap()
    }

    #[test]
    fn grid_rules() {
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(1.0, 1).is_err());
        let g = TimeGrid::new(10.0, 150).unwrap();
        assert_eq!(g.node(150), 10.0);
        assert_abs_diff_eq!(g.trapezoid(vec![1.0; 151]), 10.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_dynamics_keep_state() {
        let e = Ensemble::single(Matrix::zeros(2, 2), Matrix::zeros(2, 1), Matrix::identity(2))
            .unwrap();
        let g = TimeGrid::new(3.0, 20).unwrap();
        let x = integrate_forward(&e, &g, &ControlTrajectory::zeros(&g, 1), &[vec![1.5, -2.0]])
            .unwrap();
        for k in 0..g.n_nodes() {
            assert_eq!(x.at(0, k), &[1.5, -2.0]);
        }
    }

    #[test]
    fn scalar_decay_second_order() {
        let e = scalar(1.0, 0.0, 1.0);
        let g = TimeGrid::new(1.0, 150).unwrap();
        let x = integrate_forward(&e, &g, &ControlTrajectory::zeros(&g, 1), &[vec![1.0]]).unwrap();
        assert!((x.at(0, 150)[0] - (-1.0f64).exp()).abs() <= 1e-4);
    }

    #[test]
    fn oscillator_matches_matrix_exponential() {
        let a = Matrix::from_rows(&[vec![2.0, -5.0], vec![5.0, 0.1]])
            .unwrap()
            .scaled(5.0);
        let e = Ensemble::single(a.clone(), Matrix::column(&[5.0, 7.0]), Matrix::identity(2))
            .unwrap();
        let g = TimeGrid::new(1.0, 600).unwrap();
        let x = integrate_forward(&e, &g, &ControlTrajectory::zeros(&g, 1), &[vec![1.0, 0.0]])
            .unwrap();
        for k in [40, 300, 600] {
            let exact = crate::linalg::mat_exp(&a, g.node(k)).matvec(&[1.0, 0.0]);
            for j in 0..2 {
                assert!((x.at(0, k)[j] - exact[j]).abs() <= 1e-3);
            }
        }
    }

    #[test]
    fn adjoint_without_observation_decays() {
        // C = 0: −φ' + φ = 0, φ(T) = v → φ(t) = e^{−(T−t)} v
        let e = scalar(1.0, 1.0, 0.0);
        let g = TimeGrid::new(2.0, 200).unwrap();
        let x = integrate_forward(&e, &g, &ControlTrajectory::zeros(&g, 1), &[vec![0.3]]).unwrap();
        let phi = integrate_adjoint(&e, &g, &x, &[0.0], &[vec![2.0]]).unwrap();
        for k in 0..g.n_nodes() {
            let exact = 2.0 * (-(2.0 - g.node(k))).exp();
            assert!((phi.at(0, k)[0] - exact).abs() <= 1e-2, "node {k}");
        }
        // interior nodes are second order
        let mid = phi.at(0, 100)[0];
        assert!((mid - 2.0 * (-1.0f64).exp()).abs() <= 1e-4);
    }

    #[test]
    fn adjoint_vanishes_when_target_is_met() {
        let e = DistributionSpec::bernoulli_pair().build().unwrap();
        let g = TimeGrid::new(1.0, 30).unwrap();
        let x0 = vec![vec![0.0], vec![0.0]];
        let x = integrate_forward(&e, &g, &ControlTrajectory::zeros(&g, 1), &x0).unwrap();
        let phi = integrate_adjoint(&e, &g, &x, &[0.0], &e.zeros(1)).unwrap();
        assert!(phi.node_values(0).iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn closed_loop_scalar() {
        // A = −1, C = 1, K = 2 → A + KC = 1
        let e = scalar(-1.0, 1.0, 1.0);
        let g = TimeGrid::new(2.0, 400).unwrap();
        let x = closed_loop_forward(&e, &[Matrix::scalar(2.0)], &g, &[vec![3.0]]).unwrap();
        assert_abs_diff_eq!(x.at(0, 400)[0], 3.0 * (-2.0f64).exp(), epsilon = 1e-5);
    }

    #[test]
    fn closed_loop_zero_gain_is_open_loop() {
        let e = DistributionSpec::poisson_oscillator(3, 5).build().unwrap();
        let g = TimeGrid::new(1.0, 40).unwrap();
        let x0 = e.broadcast(&[1.0, -1.0]);
        let k = vec![Matrix::zeros(2, 2); 3];
        let a = closed_loop_forward(&e, &k, &g, &x0).unwrap();
        let b = integrate_forward(&e, &g, &ControlTrajectory::zeros(&g, 1), &x0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bernoulli_closed_loop_decays_like_exp() {
        let e = DistributionSpec::bernoulli_pair().build().unwrap();
        let g = TimeGrid::new(3.0, 600).unwrap();
        let gains = [Matrix::scalar(0.0), Matrix::scalar(-2.0)];
        let x = closed_loop_forward(&e, &gains, &g, &[vec![1.0], vec![-2.0]]).unwrap();
        for k in [100, 600] {
            let decay = (-g.node(k)).exp();
            assert_abs_diff_eq!(x.at(0, k)[0], decay, epsilon = 1e-5);
            assert_abs_diff_eq!(x.at(1, k)[0], -2.0 * decay, epsilon = 1e-5);
        }
    }

    #[test]
    fn singular_step_matrix_is_reported() {
        // I + (h/2)A = 0 for A = −2/h
        let g = TimeGrid::new(1.0, 10).unwrap();
        let e = scalar(-20.0, 1.0, 1.0);
        let err = integrate_forward(&e, &g, &ControlTrajectory::zeros(&g, 1), &[vec![1.0]]);
        assert!(matches!(err, Err(Error::SingularStepMatrix { sample: 0, .. })));
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let e = scalar(1.0, 1.0, 1.0);
        let g = TimeGrid::new(1.0, 10).unwrap();
        let other = TimeGrid::new(1.0, 12).unwrap();
        let x = integrate_forward(&e, &other, &ControlTrajectory::zeros(&other, 1), &[vec![1.0]])
            .unwrap();
        assert!(matches!(
            integrate_adjoint(&e, &g, &x, &[0.0], &[vec![0.0]]),
            Err(Error::GridMismatch(_))
        ));
    }
}
