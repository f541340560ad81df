//! Time-independent counterpart of the tracking problem.
//!
//! Minimizes `½(‖u‖² + ‖𝔼[C x] − z‖²)` subject to `A(ω) x(ω) = B(ω) u` for
//! every sample. With `M = Σ wᵢ Cᵢ Aᵢ⁻¹ Bᵢ` the minimizer solves
//! `(I + MᵀM) u = Mᵀ z`.

use serde::Serialize;

use crate::ensemble::{Ensemble, SampleVectors};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Lu, Matrix};

#[derive(Clone, Debug, Serialize)]
pub struct StationarySolution {
    pub u: Vec<f64>,
    pub x: SampleVectors,
    pub phi: SampleVectors,
    pub mean_state: Vec<f64>,
    pub cost: f64,
    /// `‖u + 𝔼[Bᵀ φ]‖`; zero up to rounding at the optimum.
    pub consistency_residual: f64,
    #[serde(skip)]
    pub observation_map: Matrix,
}

/// `M = Σ wᵢ Cᵢ Aᵢ⁻¹ Bᵢ` together with the per-sample factorizations.
fn observation_map(ens: &Ensemble) -> Result<(Matrix, Vec<Lu>)> {
    let mut m = Matrix::zeros(ens.p(), ens.m());
    let mut lus = Vec::with_capacity(ens.len());
    for (i, s) in ens.samples().iter().enumerate() {
        let lu = Lu::factor(&s.a).map_err(|_| Error::SingularSample(i))?;
        let sol = lu.solve_matrix(&s.b);
        m = m.add(&s.c.matmul(&sol).scaled(s.weight));
        lus.push(lu);
    }
    Ok((m, lus))
}

pub fn solve_stationary(ens: &Ensemble, z: &[f64]) -> Result<StationarySolution> {
    if z.len() != ens.p() {
        return Err(Error::DimensionMismatch(format!(
            "target z has dimension {}, expected {}",
            z.len(),
            ens.p()
        )));
    }
    let (map, lus) = observation_map(ens)?;
    let normal = Matrix::identity(ens.m()).add(&map.transpose().matmul(&map));
    let u = Lu::factor(&normal)?.solve(&map.tr_matvec(z));

    let mut residual = map.matvec(&u);
    for (r, zj) in residual.iter_mut().zip(z) {
        *r -= zj;
    }

    let mut x = Vec::with_capacity(ens.len());
    let mut phi = Vec::with_capacity(ens.len());
    let mut pairing = vec![0.0; ens.m()];
    for (s, lu) in ens.samples().iter().zip(&lus) {
        x.push(lu.solve(&s.b.matvec(&u)));
        let ph = lu.solve_transpose(&s.c.tr_matvec(&residual));
        for (p, v) in pairing.iter_mut().zip(s.b.tr_matvec(&ph)) {
            *p += s.weight * v;
        }
        phi.push(ph);
    }
    let mean_state = ens.expect(&x)?;
    let consistency: Vec<f64> = u.iter().zip(&pairing).map(|(a, b)| a + b).collect();

    Ok(StationarySolution {
        cost: 0.5 * (dot(&u, &u) + dot(&residual, &residual)),
        consistency_residual: norm(&consistency),
        u,
        x,
        phi,
        mean_state,
        observation_map: map,
    })
}
