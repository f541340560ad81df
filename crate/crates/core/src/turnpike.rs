//! Distances between the time-dependent and stationary optima, envelope fits
//! and horizon sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{EnsembleTrajectory, TimeGrid};
use crate::ensemble::{Ensemble, SampleVectors};
use crate::error::{Error, Result};
use crate::evolutionary::{solve_evolutionary, EvolutionaryProblem, EvolutionarySolution, SolverOptions};
use crate::linalg::norm;
use crate::stationary::{solve_stationary, StationarySolution};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TurnpikeReport {
    pub times: Vec<f64>,
    pub d_state: Vec<f64>,
    pub d_adjoint: Vec<f64>,
    pub d_control: Vec<f64>,
    pub d_total: Vec<f64>,
}

impl TurnpikeReport {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

fn distance(ens: &Ensemble, traj: &EnsembleTrajectory, k: usize, target: &SampleVectors) -> f64 {
    let diff: SampleVectors = (0..ens.len())
        .map(|i| {
            traj.at(i, k)
                .iter()
                .zip(&target[i])
                .map(|(a, b)| a - b)
                .collect()
        })
        .collect();
    ens.norm(&diff)
}

/// Node-wise `‖x − xˢ‖_w`, `‖φ − φˢ‖_w`, `‖u − uˢ‖` and their sum.
pub fn turnpike_distances(
    evo: &EvolutionarySolution,
    stat: &StationarySolution,
    ens: &Ensemble,
    grid: &TimeGrid,
) -> Result<TurnpikeReport> {
    let nodes = grid.n_nodes();
    for (what, traj) in [("state", &evo.x), ("adjoint", &evo.phi)] {
        if traj.n_nodes() != nodes || traj.n_samples() != ens.len() || traj.dim() != ens.n() {
            return Err(Error::GridMismatch(format!(
                "{what} trajectory has {} nodes for {} samples, expected {nodes} for {}",
                traj.n_nodes(),
                traj.n_samples(),
                ens.len()
            )));
        }
    }
    if evo.u.n_nodes() != nodes {
        return Err(Error::GridMismatch(format!(
            "control has {} nodes, expected {nodes}",
            evo.u.n_nodes()
        )));
    }
    ens.check_sample_vectors(&stat.x, ens.n(), "stationary state")?;
    ens.check_sample_vectors(&stat.phi, ens.n(), "stationary adjoint")?;

    let mut report = TurnpikeReport {
        times: grid.nodes(),
        d_state: Vec::with_capacity(nodes),
        d_adjoint: Vec::with_capacity(nodes),
        d_control: Vec::with_capacity(nodes),
        d_total: Vec::with_capacity(nodes),
    };
    for k in 0..nodes {
        let ds = distance(ens, &evo.x, k, &stat.x);
        let da = distance(ens, &evo.phi, k, &stat.phi);
        let du: Vec<f64> = evo.u.node(k).iter().zip(&stat.u).map(|(a, b)| a - b).collect();
        let dc = norm(&du);
        report.d_state.push(ds);
        report.d_adjoint.push(da);
        report.d_control.push(dc);
        report.d_total.push(ds + da + dc);
    }
    Ok(report)
}

/// Fit window as fractions of the horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitWindow {
    pub start: f64,
    pub end: f64,
}

impl Default for FitWindow {
    fn default() -> Self {
        Self {
            start: 0.1,
            end: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnvelopeFit {
    #[serde(rename = "K")]
    pub k: f64,
    pub delta: f64,
    /// `max_k (d_k − K·env_k)`; never positive.
    pub max_residual: f64,
    pub window: [f64; 2],
    pub usable_nodes: usize,
    /// Fewer than [`MIN_FIT_NODES`] decreasing nodes inside the window.
    pub degenerate: bool,
}

pub const MIN_FIT_NODES: usize = 5;

/// `ln(e^{−δt} + e^{−δ(T−t)})` without overflow or cancellation.
pub fn log_envelope(delta: f64, t: f64, horizon: f64) -> f64 {
    -delta * t.min(horizon - t) + (-delta * (horizon - 2.0 * t).abs()).exp().ln_1p()
}

pub fn envelope(k: f64, delta: f64, t: f64, horizon: f64) -> f64 {
    k * log_envelope(delta, t, horizon).exp()
}

/// Sum of squared log residuals with `ln K` eliminated.
fn misfit(delta: f64, pts: &[(f64, f64)], horizon: f64) -> (f64, f64) {
    let r: Vec<f64> = pts
        .iter()
        .map(|(t, ld)| ld - log_envelope(delta, *t, horizon))
        .collect();
    let log_k = r.iter().sum::<f64>() / r.len() as f64;
    (r.iter().map(|v| (v - log_k).powi(2)).sum(), log_k)
}

/// Fits `d(t) ≈ K(e^{−δt} + e^{−δ(T−t)})`.
///
/// `δ ≥ 0` minimizes the log-space misfit over the nodes of the window where
/// `d` is positive and strictly decreasing. `K` is then raised to the
/// smallest value for which the envelope dominates `d` at every node.
pub fn fit_envelope(times: &[f64], d: &[f64], horizon: f64, window: FitWindow) -> Result<EnvelopeFit> {
    if times.len() != d.len() || times.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} times for {} distances",
            times.len(),
            d.len()
        )));
    }
    if !(0.0 <= window.start && window.start < window.end && window.end <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "fit window [{}, {}] must satisfy 0 <= start < end <= 1",
            window.start, window.end
        )));
    }
    if d.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidInput("distances must be finite and nonnegative".into()));
    }
    let (lo, hi) = (window.start * horizon, window.end * horizon);
    let slack = 1e-9 * horizon;
    let pts: Vec<(f64, f64)> = (1..d.len())
        .filter(|&k| times[k] >= lo - slack && times[k] <= hi + slack)
        .filter(|&k| d[k] > 0.0 && d[k] < d[k - 1])
        .map(|k| (times[k], d[k].ln()))
        .collect();

    let delta = if pts.len() >= 2 { best_delta(&pts, horizon) } else { 0.0 };

    let mut k = 0.0f64;
    for (t, v) in times.iter().zip(d) {
        k = k.max(v / log_envelope(delta, *t, horizon).exp());
    }
    k *= 1.0 + 4.0 * f64::EPSILON;
    let max_residual = times
        .iter()
        .zip(d)
        .map(|(t, v)| v - envelope(k, delta, *t, horizon))
        .fold(f64::NEG_INFINITY, f64::max);

    Ok(EnvelopeFit {
        k,
        delta,
        max_residual,
        window: [lo, hi],
        usable_nodes: pts.len(),
        degenerate: pts.len() < MIN_FIT_NODES,
    })
}

fn best_delta(pts: &[(f64, f64)], horizon: f64) -> f64 {
    // coarse logarithmic scan, then golden-section refinement around the best cell
    let scale = 1.0 / horizon.max(f64::MIN_POSITIVE);
    let grid: Vec<f64> = std::iter::once(0.0)
        .chain((0..=400).map(|i| scale * 1e-4 * 10f64.powf(i as f64 / 50.0)))
        .collect();
    let costs: Vec<f64> = grid.iter().map(|dl| misfit(*dl, pts, horizon).0).collect();
    let best = (0..grid.len())
        .min_by(|&a, &b| costs[a].total_cmp(&costs[b]))
        .expect("nonempty grid");
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(grid.len() - 1)];
    let f = |x: f64| misfit(x, pts, horizon).0;
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut e = a + g * (b - a);
    let (mut fc, mut fe) = (f(c), f(e));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-15 * (1.0 + b.abs()) {
            break;
        }
        if fc < fe {
            b = e;
            e = c;
            fe = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + g * (b - a);
            fe = f(e);
        }
    }
    let x = polish(0.5 * (a + b), pts, horizon);
    if f(x) <= costs[best] {
        x.max(0.0)
    } else {
        grid[best]
    }
}

/// `d/dδ ln(e^{−δt} + e^{−δ(T−t)})`.
fn log_envelope_slope(delta: f64, t: f64, horizon: f64) -> f64 {
    let (near, far) = (t.min(horizon - t), t.max(horizon - t));
    let e = (-delta * (far - near)).exp();
    -(near + far * e) / (1.0 + e)
}

/// Half the derivative of the misfit, up to sign.
fn misfit_slope(delta: f64, pts: &[(f64, f64)], horizon: f64) -> f64 {
    let (_, log_k) = misfit(delta, pts, horizon);
    pts.iter()
        .map(|(t, ld)| (ld - log_envelope(delta, *t, horizon) - log_k) * log_envelope_slope(delta, *t, horizon))
        .sum()
}

/// The misfit is flat at its minimum, so a comparison search only resolves δ
/// to about the square root of the rounding level. Bisection on the
/// derivative, bracketed around the estimate, finishes the job.
fn polish(x: f64, pts: &[(f64, f64)], horizon: f64) -> f64 {
    let g = |d: f64| misfit_slope(d, pts, horizon);
    let width = 1e-6 * x.abs().max(1e-12);
    let (mut lo, mut hi) = ((x - width).max(0.0), x + width);
    let (glo, ghi) = (g(lo), g(hi));
    if glo.signum() == ghi.signum() {
        return x;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid).signum() == glo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub n_steps: usize,
    pub avg_state_err: f64,
    pub avg_control_err: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HorizonSweep {
    pub rows: Vec<SweepRow>,
}

/// Solves the time-dependent problem for every horizon with
/// `n_steps = ⌈T · steps_per_unit⌉` and compares time averages against the
/// stationary optimum.
pub fn sweep_horizons(
    base: &EvolutionaryProblem,
    horizons: &[f64],
    steps_per_unit: f64,
    opts: &SolverOptions,
) -> Result<HorizonSweep> {
    if horizons.is_empty() {
        return Err(Error::InvalidInput("no horizons given".into()));
    }
    if horizons.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidInput("horizons must be strictly increasing".into()));
    }
    if !(steps_per_unit > 0.0 && steps_per_unit.is_finite()) {
        return Err(Error::InvalidInput("steps_per_unit must be positive".into()));
    }
    let stat = solve_stationary(&base.ens, &base.z)?;
    let rows = horizons
        .par_iter()
        .map(|&t| {
            let n_steps = (t * steps_per_unit).ceil() as usize;
            let grid = TimeGrid::new(t, n_steps)?;
            let sol = solve_evolutionary(&base.with_grid(grid), opts)?;
            Ok(sweep_row(&base.ens, &grid, &sol, &stat))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HorizonSweep { rows })
}

fn sweep_row(
    ens: &Ensemble,
    grid: &TimeGrid,
    sol: &EvolutionarySolution,
    stat: &StationarySolution,
) -> SweepRow {
    let avg_x = sol.x.time_average(grid);
    let dx: SampleVectors = avg_x
        .iter()
        .zip(&stat.x)
        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p - q).collect())
        .collect();
    let du: Vec<f64> = sol
        .u
        .time_average(grid)
        .iter()
        .zip(&stat.u)
        .map(|(a, b)| a - b)
        .collect();
    SweepRow {
        horizon: grid.horizon(),
        n_steps: grid.n_steps(),
        avg_state_err: ens.norm(&dx),
        avg_control_err: norm(&du),
        iterations: sol.iterations,
    }
}
