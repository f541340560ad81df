//! Coercivity checks for detectability and stabilizability on average.
//!
//! Operators act on the weighted ensemble space with inner product
//! `Σᵢ wᵢ (uᵢ, vᵢ)`. After the similarity `ṽᵢ = √wᵢ vᵢ` the coercivity
//! constant is the smallest eigenvalue of the symmetric part of the rescaled
//! operator, and the witness is the matching eigenvector mapped back.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{closed_loop_forward, TimeGrid};
use crate::ensemble::{Ensemble, SampleVectors};
use crate::error::{Error, Result};
use crate::linalg::{dot, sym_eig_min, Matrix};
use crate::rng::RngState;

/// Feedback gains, shared by all samples or given per sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FeedbackSpec {
    Constant(Matrix),
    PerSample(Vec<Matrix>),
}

impl FeedbackSpec {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        FeedbackSpec::Constant(Matrix::zeros(rows, cols))
    }

    /// One gain per sample, each checked to be `rows × cols`.
    pub fn gains(&self, ens: &Ensemble, rows: usize, cols: usize) -> Result<Vec<Matrix>> {
        let gains = match self {
            FeedbackSpec::Constant(k) => vec![k.clone(); ens.len()],
            FeedbackSpec::PerSample(ks) => {
                if ks.len() != ens.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "{} gains for {} samples",
                        ks.len(),
                        ens.len()
                    )));
                }
                ks.clone()
            }
        };
        for (i, k) in gains.iter().enumerate() {
            if k.rows() != rows || k.cols() != cols {
                return Err(Error::DimensionMismatch(format!(
                    "gain {i} is {}x{}, expected {rows}x{cols}",
                    k.rows(),
                    k.cols()
                )));
            }
        }
        Ok(gains)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum A2Variant {
    #[default]
    Single,
    Double,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub variant: String,
    pub alpha: f64,
    pub passed: bool,
    pub witness: SampleVectors,
    pub gain_used: Vec<Matrix>,
    /// `false` for scans and randomized searches, which can only falsify.
    pub exhaustive: bool,
}

/// Rescaled block operator `L̃ᵢⱼ = δᵢⱼ Dᵢ + √(wᵢwⱼ) Pᵢ Qⱼ`.
fn weighted_operator(ens: &Ensemble, diag: &[Matrix], left: &[Matrix], right: &[Matrix]) -> Matrix {
    let n = ens.n();
    let len = ens.len();
    let w: Vec<f64> = ens.weights().map(f64::sqrt).collect();
    let mut data = vec![0.0; len * n * len * n];
    let cols = len * n;
    for i in 0..len {
        for j in 0..len {
            let mut block = left[i].matmul(&right[j]).scaled(w[i] * w[j]);
            if i == j {
                block = block.add(&diag[i]);
            }
            for r in 0..n {
                for c in 0..n {
                    data[(i * n + r) * cols + j * n + c] = block[(r, c)];
                }
            }
        }
    }
    Matrix::from_row_major(cols, cols, data).expect("block sizes are consistent")
}

fn weighted_report(
    ens: &Ensemble,
    variant: &str,
    op: &Matrix,
    gains: Vec<Matrix>,
) -> Result<CheckReport> {
    let (alpha, vec) = sym_eig_min(&op.sym_part())?;
    let n = ens.n();
    let witness = ens
        .weights()
        .enumerate()
        .map(|(i, w)| vec[i * n..(i + 1) * n].iter().map(|v| v / w.sqrt()).collect())
        .collect();
    Ok(CheckReport {
        variant: variant.into(),
        alpha,
        passed: alpha > 0.0,
        witness,
        gain_used: gains,
        exhaustive: true,
    })
}

/// Detectability on average: `(Lv)ᵢ = Aᵢvᵢ + Kᵢ Σⱼ wⱼ KⱼCⱼvⱼ`.
pub fn check_a1(ens: &Ensemble, k: &FeedbackSpec) -> Result<CheckReport> {
    if ens.p() != ens.n() {
        return Err(Error::DimensionMismatch(format!(
            "detectability check applies the gain twice and needs p = n (got p = {}, n = {})",
            ens.p(),
            ens.n()
        )));
    }
    let gains = k.gains(ens, ens.n(), ens.p())?;
    let diag: Vec<Matrix> = ens.samples().iter().map(|s| s.a.clone()).collect();
    let right: Vec<Matrix> = ens
        .samples()
        .iter()
        .zip(&gains)
        .map(|(s, g)| g.matmul(&s.c))
        .collect();
    let op = weighted_operator(ens, &diag, &gains, &right);
    weighted_report(ens, "A1", &op, gains)
}

/// Stabilizability on average.
///
/// `Single`: `(Lv)ᵢ = Aᵢᵀvᵢ + Kᵢ Σⱼ wⱼ Bⱼᵀvⱼ` with `Kᵢ` of size `n × m`.
/// `Double` (only for `m = n`): `(Lv)ᵢ = Aᵢᵀvᵢ + Kᵢ Σⱼ wⱼ KⱼBⱼᵀvⱼ`.
pub fn check_a2(ens: &Ensemble, k: &FeedbackSpec, variant: A2Variant) -> Result<CheckReport> {
    let gains = k.gains(ens, ens.n(), ens.m())?;
    let diag: Vec<Matrix> = ens.samples().iter().map(|s| s.a.transpose()).collect();
    let bt: Vec<Matrix> = ens.samples().iter().map(|s| s.b.transpose()).collect();
    match variant {
        A2Variant::Single => {
            let op = weighted_operator(ens, &diag, &gains, &bt);
            weighted_report(ens, "A2-single", &op, gains)
        }
        A2Variant::Double => {
            if ens.m() != ens.n() {
                return Err(Error::DoubleVariantRequiresSquareB {
                    m: ens.m(),
                    n: ens.n(),
                });
            }
            let right: Vec<Matrix> = gains.iter().zip(&bt).map(|(g, b)| g.matmul(b)).collect();
            let op = weighted_operator(ens, &diag, &gains, &right);
            weighted_report(ens, "A2-double", &op, gains)
        }
    }
}

/// Simultaneous detectability: `minᵢ λ_min(sym(Aᵢ + KᵢCᵢ))`.
pub fn check_a0(ens: &Ensemble, k: &FeedbackSpec) -> Result<CheckReport> {
    let gains = k.gains(ens, ens.n(), ens.p())?;
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    for (i, (s, g)) in ens.samples().iter().zip(&gains).enumerate() {
        let closed = s.a.add(&g.matmul(&s.c));
        let (lam, vec) = sym_eig_min(&closed.sym_part())?;
        if best.as_ref().is_none_or(|b| lam < b.1) {
            best = Some((i, lam, vec));
        }
    }
    let (idx, alpha, vec) = best.ok_or_else(|| Error::InvalidInput("empty ensemble".into()))?;
    let mut witness = ens.zeros(ens.n());
    let scale = 1.0 / ens.samples()[idx].weight.sqrt();
    witness[idx] = vec.iter().map(|v| v * scale).collect();
    Ok(CheckReport {
        variant: "A0".into(),
        alpha,
        passed: alpha > 0.0,
        witness,
        gain_used: gains,
        exhaustive: true,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    #[serde(rename = "AC")]
    AC,
    #[serde(rename = "AB")]
    AB,
}

/// Largest `α` certified for `‖Av‖_w + ‖𝔼[Cv]‖ ≥ α‖v‖_w` (or with `Aᵀ`, `Bᵀ`).
///
/// Computed as `√λ_min` of the Gram matrix of
/// `q(v) = Σᵢ wᵢ‖Aᵢvᵢ‖² + ‖Σᵢ wᵢCᵢvᵢ‖²`, which lower-bounds the squared sum.
pub fn stationary_coercivity(ens: &Ensemble, side: Side) -> Result<f64> {
    let n = ens.n();
    let len = ens.len();
    let dim = len * n;
    let (blocks, obs): (Vec<Matrix>, Vec<Matrix>) = ens
        .samples()
        .iter()
        .map(|s| match side {
            Side::AC => (s.a.clone(), s.c.clone()),
            Side::AB => (s.a.transpose(), s.b.transpose()),
        })
        .unzip();
    let rows = obs[0].rows();
    let mut g = vec![0.0; rows * dim];
    for (i, (o, s)) in obs.iter().zip(ens.samples()).enumerate() {
        let sw = s.weight.sqrt();
        for r in 0..rows {
            for c in 0..n {
                g[r * dim + i * n + c] = sw * o[(r, c)];
            }
        }
    }
    let g = Matrix::from_row_major(rows, dim, g)?;
    let mut q = g.transpose().matmul(&g);
    let mut data = q.as_slice().to_vec();
    for (i, a) in blocks.iter().enumerate() {
        let ata = a.transpose().matmul(a);
        for r in 0..n {
            for c in 0..n {
                data[(i * n + r) * dim + i * n + c] += ata[(r, c)];
            }
        }
    }
    q = Matrix::from_row_major(dim, dim, data)?;
    let (lam, _) = sym_eig_min(&q.sym_part())?;
    Ok(lam.max(0.0).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComplementarySide {
    C,
    B,
}

/// Tolerance for treating the closed-loop matrices as sample-independent.
pub const CONSTANT_LOOP_TOL: f64 = 1e-10;
/// Trials of the randomized search for the non-constant case.
pub const FALSIFICATION_TRIALS: usize = 10_000;
const FALSIFICATION_SEED: u64 = 0x5EED;

/// `(Sv, 𝔼[v])_w ≥ α‖𝔼[v]‖²` for all `v`, with `Sᵢ = Aᵢ + KᵢCᵢ` (side `C`)
/// or `Sᵢ = Aᵢᵀ + KᵢBᵢᵀ` (side `B`).
///
/// For fixed `𝔼[v]` the form is affine in the mean-zero part of `v`, so it
/// can only be bounded below when `Sᵢ` does not depend on the sample.
/// Otherwise a seeded random search looks for violating `v`.
pub fn check_complementary(
    ens: &Ensemble,
    k: &FeedbackSpec,
    side: ComplementarySide,
) -> Result<CheckReport> {
    let n = ens.n();
    let (cols, variant) = match side {
        ComplementarySide::C => (ens.p(), "complementary-C"),
        ComplementarySide::B => (ens.m(), "complementary-B"),
    };
    let gains = k.gains(ens, n, cols)?;
    let loops: Vec<Matrix> = ens
        .samples()
        .iter()
        .zip(&gains)
        .map(|(s, g)| match side {
            ComplementarySide::C => s.a.add(&g.matmul(&s.c)),
            ComplementarySide::B => s.a.transpose().add(&g.matmul(&s.b.transpose())),
        })
        .collect();

    let constant = loops
        .iter()
        .all(|l| l.sub(&loops[0]).max_abs() <= CONSTANT_LOOP_TOL);
    if constant {
        let (alpha, vec) = sym_eig_min(&loops[0].sym_part())?;
        return Ok(CheckReport {
            variant: variant.into(),
            alpha,
            passed: alpha > 0.0,
            witness: ens.broadcast(&vec),
            gain_used: gains,
            exhaustive: true,
        });
    }

    let ratio = |v: &SampleVectors| -> Result<f64> {
        let mean = ens.expect(v)?;
        let sv: SampleVectors = loops.iter().zip(v).map(|(l, vi)| l.matvec(vi)).collect();
        Ok(dot(&ens.expect(&sv)?, &mean) / dot(&mean, &mean))
    };
    let mut rng = RngState::new(FALSIFICATION_SEED);
    let mut best: Option<(f64, SampleVectors)> = None;
    for _ in 0..FALSIFICATION_TRIALS {
        let base: Vec<f64> = (0..n).map(|_| rng.next_normal()).collect();
        let raw: SampleVectors = (0..ens.len())
            .map(|_| (0..n).map(|_| rng.next_normal()).collect())
            .collect();
        let raw_mean = ens.expect(&raw)?;
        let scale = 10f64.powf(3.0 * rng.next_uniform());
        for sign in [1.0, -1.0] {
            let v: SampleVectors = raw
                .iter()
                .map(|r| {
                    base.iter()
                        .zip(r.iter().zip(&raw_mean))
                        .map(|(b, (x, m))| b + sign * scale * (x - m))
                        .collect()
                })
                .collect();
            let q = ratio(&v)?;
            if best.as_ref().is_none_or(|b| q < b.0) {
                best = Some((q, v));
            }
        }
    }
    let (alpha, witness) = best.expect("at least one trial");
    Ok(CheckReport {
        variant: variant.into(),
        alpha,
        passed: false,
        witness,
        gain_used: gains,
        exhaustive: false,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayCheck {
    pub holds: bool,
    /// `min_k (e^{−α t_k}‖𝔼[x₀]‖² + 1e-10 − ‖𝔼[x(t_k)]‖²)`.
    pub min_slack: f64,
    /// `−ln(‖𝔼[x(T)]‖² / ‖𝔼[x₀]‖²) / T`, when both norms are positive.
    pub observed_rate: Option<f64>,
}

/// Simulates `x' + (A + KC)x = 0` and checks
/// `‖𝔼[x(t_k)]‖² ≤ e^{−α t_k}‖𝔼[x₀]‖² + 1e-10` at every node.
pub fn verify_average_decay(
    ens: &Ensemble,
    k: &FeedbackSpec,
    grid: &TimeGrid,
    x0: &[Vec<f64>],
    alpha: f64,
) -> Result<DecayCheck> {
    let gains = k.gains(ens, ens.n(), ens.p())?;
    let traj = closed_loop_forward(ens, &gains, grid, x0)?;
    let sq = |k: usize| -> Result<f64> {
        let m = ens.expect(&traj.node_values(k))?;
        Ok(dot(&m, &m))
    };
    let e0 = sq(0)?;
    let mut min_slack = f64::INFINITY;
    for k in 0..grid.n_nodes() {
        let slack = (-alpha * grid.node(k)).exp() * e0 + 1e-10 - sq(k)?;
        min_slack = min_slack.min(slack);
    }
    let e_end = sq(grid.n_steps())?;
    let observed_rate =
        (e0 > 0.0 && e_end > 0.0).then(|| -(e_end / e0).ln() / grid.horizon());
    Ok(DecayCheck {
        holds: min_slack >= 0.0,
        min_slack,
        observed_rate,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Which {
    A1,
    A2,
    A0,
}

/// One scanned gain entry `K_sample[row, col] ∈ {min, min + step, …} ∩ [min, max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainEntry {
    pub sample: usize,
    pub row: usize,
    pub col: usize,
    #[serde(default = "default_min")]
    pub min: f64,
    #[serde(default = "default_max")]
    pub max: f64,
    #[serde(default = "default_step")]
    pub step: f64,
}

fn default_min() -> f64 {
    -10.0
}

fn default_max() -> f64 {
    10.0
}

fn default_step() -> f64 {
    0.05
}

impl GainEntry {
    pub fn new(sample: usize, row: usize, col: usize) -> Self {
        Self {
            sample,
            row,
            col,
            min: default_min(),
            max: default_max(),
            step: default_step(),
        }
    }

    fn count(&self) -> usize {
        ((self.max - self.min) / self.step + 1e-9).floor() as usize + 1
    }

    fn value(&self, idx: usize) -> f64 {
        self.min + idx as f64 * self.step
    }
}

pub const MAX_SCAN_ENTRIES: usize = 4;
const MAX_SCAN_POINTS: usize = 50_000_000;

/// Grid scan over the listed gain entries (all other entries zero), returning
/// the report with the largest `alpha`. Ties go to the first point in
/// lexicographic scan order. The result is never exhaustive.
pub fn scan_scalar_feedback(
    ens: &Ensemble,
    which: Which,
    entries: &[GainEntry],
) -> Result<CheckReport> {
    if entries.len() > MAX_SCAN_ENTRIES {
        return Err(Error::TooManyGainEntries(entries.len()));
    }
    let cols = match which {
        Which::A2 => ens.m(),
        Which::A1 | Which::A0 => ens.p(),
    };
    let n = ens.n();
    for e in entries {
        if !(e.min.is_finite() && e.max.is_finite() && e.step > 0.0 && e.min <= e.max) {
            return Err(Error::InvalidInput(format!(
                "scan range [{}, {}] with step {} is not a finite increasing range",
                e.min, e.max, e.step
            )));
        }
        if e.sample >= ens.len() || e.row >= n || e.col >= cols {
            return Err(Error::DimensionMismatch(format!(
                "scan entry ({}, {}, {}) is outside the gain shape",
                e.sample, e.row, e.col
            )));
        }
    }
    let counts: Vec<usize> = entries.iter().map(GainEntry::count).collect();
    let total = counts
        .iter()
        .try_fold(1usize, |acc, c| acc.checked_mul(*c))
        .filter(|t| *t <= MAX_SCAN_POINTS)
        .ok_or_else(|| Error::InvalidInput("gain scan grid is too large".into()))?;

    let gains_at = |mut idx: usize| -> FeedbackSpec {
        let mut gains = vec![Matrix::zeros(n, cols); ens.len()];
        for (e, c) in entries.iter().zip(&counts).rev() {
            let v = e.value(idx % c);
            idx /= c;
            let mut data = gains[e.sample].as_slice().to_vec();
            data[e.row * cols + e.col] = v;
            gains[e.sample] = Matrix::from_row_major(n, cols, data).expect("same shape");
        }
        FeedbackSpec::PerSample(gains)
    };
    let check = |k: &FeedbackSpec| match which {
        Which::A1 => check_a1(ens, k),
        Which::A2 => check_a2(ens, k, A2Variant::Single),
        Which::A0 => check_a0(ens, k),
    };

    let (best_idx, _) = (0..total)
        .into_par_iter()
        .map(|idx| check(&gains_at(idx)).map(|r| (idx, r.alpha)))
        .try_reduce(
            || (usize::MAX, f64::NEG_INFINITY),
            |a, b| {
                let a_wins = a.1 > b.1 || (a.1 == b.1 && a.0 < b.0);
                Ok(if a_wins { a } else { b })
            },
        )?;
    let mut report = check(&gains_at(best_idx))?;
    report.variant = format!("{}-scan", report.variant);
    report.exhaustive = false;
    Ok(report)
}
