//! Finite weighted-atom representation of the parameter space.
//!
//! An [`Ensemble`] is an ordered list of `(weight, A, B, C)` samples. The
//! expectation of a per-sample quantity is the weighted sum in list order,
//! and the weighted inner product `Σᵢ wᵢ (vᵢ, wᵢ)` plays the role of the
//! `L²(Ω; ℝⁿ)` inner product.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::rng::RngState;

/// One vector per ensemble sample.
pub type SampleVectors = Vec<Vec<f64>>;

/// Tolerance on `Σ wᵢ = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSample {
    pub weight: f64,
    #[serde(rename = "A")]
    pub a: Matrix,
    #[serde(rename = "B")]
    pub b: Matrix,
    #[serde(rename = "C")]
    pub c: Matrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnsembleFile", into = "EnsembleFile")]
pub struct Ensemble {
    n: usize,
    m: usize,
    p: usize,
    samples: Vec<ParameterSample>,
}

/// On-disk layout of an ensemble.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleFile {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub samples: Vec<ParameterSample>,
}

impl TryFrom<EnsembleFile> for Ensemble {
    type Error = Error;
    fn try_from(f: EnsembleFile) -> Result<Self> {
        let ens = Ensemble::new(f.samples)?;
        if (ens.n, ens.m, ens.p) != (f.n, f.m, f.p) {
            return Err(Error::DimensionMismatch(format!(
                "declared (n, m, p) = ({}, {}, {}) but samples have ({}, {}, {})",
                f.n, f.m, f.p, ens.n, ens.m, ens.p
            )));
        }
        Ok(ens)
    }
}

impl From<Ensemble> for EnsembleFile {
    fn from(e: Ensemble) -> Self {
        Self {
            n: e.n,
            m: e.m,
            p: e.p,
            samples: e.samples,
        }
    }
}

impl Ensemble {
    pub fn new(samples: Vec<ParameterSample>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::InvalidInput("ensemble has no samples".into()))?;
        let n = first.a.rows();
        let m = first.b.cols();
        let p = first.c.rows();
        for (i, s) in samples.iter().enumerate() {
            if s.a.rows() != n || s.a.cols() != n {
                return Err(Error::DimensionMismatch(format!(
                    "sample {i}: A is {}x{}, expected {n}x{n}",
                    s.a.rows(),
                    s.a.cols()
                )));
            }
            if s.b.rows() != n || s.b.cols() != m {
                return Err(Error::DimensionMismatch(format!(
                    "sample {i}: B is {}x{}, expected {n}x{m}",
                    s.b.rows(),
                    s.b.cols()
                )));
            }
            if s.c.rows() != p || s.c.cols() != n {
                return Err(Error::DimensionMismatch(format!(
                    "sample {i}: C is {}x{}, expected {p}x{n}",
                    s.c.rows(),
                    s.c.cols()
                )));
            }
            if !(s.weight > 0.0) || !s.weight.is_finite() {
                return Err(Error::ZeroWeight(i));
            }
        }
        let total: f64 = samples.iter().map(|s| s.weight).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidInput(format!(
                "sample weights sum to {total}, expected 1"
            )));
        }
        Ok(Self { n, m, p, samples })
    }

    /// Single deterministic system with weight one.
    pub fn single(a: Matrix, b: Matrix, c: Matrix) -> Result<Self> {
        Self::new(vec![ParameterSample {
            weight: 1.0,
            a,
            b,
            c,
        }])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[ParameterSample] {
        &self.samples
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.weight)
    }

    /// `Σᵢ wᵢ vᵢ`, accumulated in sample order.
    pub fn expect(&self, values: &[Vec<f64>]) -> Result<Vec<f64>> {
        if values.len() != self.samples.len() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} per-sample values, got {}",
                self.samples.len(),
                values.len()
            )));
        }
        let dim = values[0].len();
        let mut acc = vec![0.0; dim];
        for (s, v) in self.samples.iter().zip(values) {
            if v.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "per-sample values have lengths {dim} and {}",
                    v.len()
                )));
            }
            for (a, x) in acc.iter_mut().zip(v) {
                *a += s.weight * x;
            }
        }
        Ok(acc)
    }

    /// `𝔼[C v]` for a per-sample state `v`.
    pub fn mean_observation(&self, v: &[Vec<f64>]) -> Vec<f64> {
        let mut acc = vec![0.0; self.p];
        for (s, vi) in self.samples.iter().zip(v) {
            let cv = s.c.matvec(vi);
            for (a, x) in acc.iter_mut().zip(&cv) {
                *a += s.weight * x;
            }
        }
        acc
    }

    /// Weighted inner product `Σᵢ wᵢ (vᵢ, uᵢ)`.
    pub fn inner(&self, v: &[Vec<f64>], u: &[Vec<f64>]) -> f64 {
        self.samples
            .iter()
            .zip(v.iter().zip(u))
            .map(|(s, (a, b))| s.weight * dot(a, b))
            .sum()
    }

    pub fn norm(&self, v: &[Vec<f64>]) -> f64 {
        self.inner(v, v).sqrt()
    }

    /// Validates a per-sample vector field of dimension `dim`.
    pub fn check_sample_vectors(&self, v: &[Vec<f64>], dim: usize, what: &str) -> Result<()> {
        if v.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "{what}: expected {} samples, got {}",
                self.len(),
                v.len()
            )));
        }
        for (i, vi) in v.iter().enumerate() {
            if vi.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "{what}[{i}]: expected dimension {dim}, got {}",
                    vi.len()
                )));
            }
            if vi.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!("{what}[{i}] is not finite")));
            }
        }
        Ok(())
    }

    /// The same vector for every sample.
    pub fn broadcast(&self, v: &[f64]) -> SampleVectors {
        vec![v.to_vec(); self.len()]
    }

    pub fn zeros(&self, dim: usize) -> SampleVectors {
        vec![vec![0.0; dim]; self.len()]
    }
}

fn default_lambda() -> f64 {
    5.0
}

fn default_sample_count() -> usize {
    200
}

fn default_seed() -> u64 {
    42
}

/// One atom of a two-point law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    #[serde(rename = "A")]
    pub a: Matrix,
    #[serde(rename = "B")]
    pub b: Matrix,
    #[serde(rename = "C")]
    pub c: Matrix,
}

/// How to build an ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DistributionSpec {
    Explicit {
        samples: Vec<ParameterSample>,
    },
    /// `A = α·A₀`, `B = β·B₀`, `C = C₀` with independent `α, β ~ Poisson(λ)`
    /// drawn per sample in the order (α, β), equal weights `1/N`.
    PoissonScaled {
        #[serde(rename = "A0")]
        a0: Matrix,
        #[serde(rename = "B0")]
        b0: Matrix,
        #[serde(rename = "C0")]
        c0: Matrix,
        #[serde(default = "default_lambda")]
        lambda: f64,
        #[serde(default = "default_sample_count")]
        sample_count: usize,
        #[serde(default = "default_seed")]
        seed: u64,
    },
    TwoPoint {
        atoms: Vec<Atom>,
        masses: Vec<f64>,
    },
}

impl DistributionSpec {
    /// The damped-oscillator benchmark: `A₀ = [[2,−5],[5,0.1]]`,
    /// `B₀ = (5,7)ᵀ`, `C₀` the coordinate swap, `λ = 5`.
    pub fn poisson_oscillator(sample_count: usize, seed: u64) -> Self {
        DistributionSpec::PoissonScaled {
            a0: Matrix::from_rows(&[vec![2.0, -5.0], vec![5.0, 0.1]]).unwrap(),
            b0: Matrix::column(&[5.0, 7.0]),
            c0: Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(),
            lambda: 5.0,
            sample_count,
            seed,
        }
    }

    /// Scalar two-point law with masses (½, ½), `A = (1, −1)`, `C = (0, −1)`,
    /// `B = 1`: detectable per sample but not detectable on average.
    pub fn bernoulli_pair() -> Self {
        let atom = |a: f64, c: f64| Atom {
            a: Matrix::scalar(a),
            b: Matrix::scalar(1.0),
            c: Matrix::scalar(c),
        };
        DistributionSpec::TwoPoint {
            atoms: vec![atom(1.0, 0.0), atom(-1.0, -1.0)],
            masses: vec![0.5, 0.5],
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            DistributionSpec::PoissonScaled { seed, .. } => Some(*seed),
            _ => None,
        }
    }

    pub fn set_seed(&mut self, new_seed: u64) {
        if let DistributionSpec::PoissonScaled { seed, .. } = self {
            *seed = new_seed;
        }
    }

    pub fn build(&self) -> Result<Ensemble> {
        build_ensemble(self)
    }
}

pub fn build_ensemble(spec: &DistributionSpec) -> Result<Ensemble> {
    match spec {
        DistributionSpec::Explicit { samples } => Ensemble::new(samples.clone()),
        DistributionSpec::PoissonScaled {
            a0,
            b0,
            c0,
            lambda,
            sample_count,
            seed,
        } => {
            if *sample_count == 0 {
                return Err(Error::InvalidInput("sample_count must be positive".into()));
            }
            let mut rng = RngState::new(*seed);
            let weight = 1.0 / *sample_count as f64;
            let mut samples = Vec::with_capacity(*sample_count);
            for _ in 0..*sample_count {
                let alpha = rng.poisson(*lambda)? as f64;
                let beta = rng.poisson(*lambda)? as f64;
                samples.push(ParameterSample {
                    weight,
                    a: a0.scaled(alpha),
                    b: b0.scaled(beta),
                    c: c0.clone(),
                });
            }
            Ensemble::new(samples)
        }
        DistributionSpec::TwoPoint { atoms, masses } => {
            if atoms.len() != 2 || masses.len() != 2 {
                return Err(Error::InvalidInput(format!(
                    "two-point law needs 2 atoms and 2 masses, got {} and {}",
                    atoms.len(),
                    masses.len()
                )));
            }
            if let Some(i) = masses.iter().position(|&w| !(w > 0.0)) {
                return Err(Error::ZeroWeight(i));
            }
            let samples = atoms
                .iter()
                .zip(masses)
                .map(|(atom, &weight)| ParameterSample {
                    weight,
                    a: atom.a.clone(),
                    b: atom.b.clone(),
                    c: atom.c.clone(),
                })
                .collect();
            Ensemble::new(samples)
        }
    }
}
