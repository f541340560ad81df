//! Linear-quadratic tracking for parameter-dependent linear systems observed
//! on average, and numerical diagnostics for the turnpike property.
//!
//! A finite [`Ensemble`] of matrix triples `(A(ω), B(ω), C(ω))` with weights
//! is driven by one control `u(t)`:
//!
//! ```text
//! x'(t, ω) + A(ω) x(t, ω) = B(ω) u(t)
//! ```
//!
//! and the cost tracks the averaged observation `𝔼[C x]` toward `z`.

pub mod assumptions;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod evolutionary;
pub mod linalg;
pub mod rng;
pub mod stationary;
pub mod turnpike;

pub use assumptions::{
    check_a0, check_a1, check_a2, check_complementary, scan_scalar_feedback,
    stationary_coercivity, verify_average_decay, A2Variant, CheckReport, ComplementarySide,
    DecayCheck, FeedbackSpec, GainEntry, Side, Which,
};
pub use dynamics::{
    closed_loop_ensemble, closed_loop_forward, integrate_adjoint, integrate_forward,
    integrate_forward_with, AdjointSweep, ControlTrajectory, EnsembleTrajectory, Propagator,
    Scheme, TimeGrid,
};
pub use ensemble::{
    build_ensemble, Atom, DistributionSpec, Ensemble, ParameterSample, SampleVectors,
};
pub use error::{Error, Result};
pub use evolutionary::{
    cost, gradient, solve_evolutionary, solve_kkt_oracle, EvolutionaryProblem,
    EvolutionarySolution, Method, SolverOptions,
};
pub use linalg::{lu_solve, mat_exp, sym_eig, sym_eig_min, Lu, Matrix, SymEigen};
pub use rng::RngState;
pub use stationary::{solve_stationary, StationarySolution};
pub use turnpike::{
    fit_envelope, sweep_horizons, turnpike_distances, EnvelopeFit, FitWindow, HorizonSweep,
    SweepRow, TurnpikeReport,
};
