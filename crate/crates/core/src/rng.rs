//! SplitMix64 stream and inverse-CDF Poisson sampling.
//!
//! The stream is fixed bit-for-bit so that seeded ensembles reproduce across
//! runs, platforms and implementations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Largest Poisson rate accepted by [`RngState::poisson`].
pub const MAX_POISSON_RATE: f64 = 50.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub state: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in `[0, 1)` built from the top 53 bits.
    pub fn next_uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw (Box-Muller, consumes two uniforms).
    pub fn next_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_uniform();
        let u2 = self.next_uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn poisson(&mut self, lambda: f64) -> Result<u64> {
        check_rate(lambda)?;
        let u = self.next_uniform();
        Ok(poisson_inverse_cdf(u, lambda))
    }
}

fn check_rate(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda <= MAX_POISSON_RATE) {
        return Err(Error::InvalidInput(format!(
            "Poisson rate must lie in (0, {MAX_POISSON_RATE}], got {lambda}"
        )));
    }
    Ok(())
}

/// Smallest `k` with `P(X ≤ k) > u` for `X ~ Poisson(lambda)`.
///
/// The cumulative sum is carried with Neumaier compensation so that the
/// comparison against `u` is not polluted by summation error.
pub fn poisson_inverse_cdf(u: f64, lambda: f64) -> u64 {
    let cap = (lambda + 40.0 * lambda.sqrt() + 50.0).ceil() as u64;
    let mut pmf = (-lambda).exp();
    let mut sum = pmf;
    let mut comp = 0.0;
    let mut k = 0u64;
    while sum + comp <= u {
        if k >= cap {
            // u sits in the far tail beyond the representable mass
            return k;
        }
        k += 1;
        pmf *= lambda / k as f64;
        let t = sum + pmf;
        if sum.abs() >= pmf.abs() {
            comp += (sum - t) + pmf;
        } else {
            comp += (pmf - t) + sum;
        }
        sum = t;
    }
    k
}
