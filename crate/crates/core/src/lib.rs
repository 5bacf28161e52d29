//! Pseudo-spectral simulator and verification harness for slightly
//! compressible barotropic Euler flow and its incompressible limit.
//!
//! The crate is organized around the objects of the problem:
//!
//! - [`domain`]: grids, spectral fields, exact calculus, Sobolev/boundary norms
//! - [`elliptic`]: Δ⁻¹, Neumann extensions, Helmholtz projections P/Q, the
//!   operator L = −δc²∇ and its Neumann-series inverse
//! - [`eos`]: the stiffness family p_k(ρ) and material-derivative chains of
//!   the sound speed
//! - [`solvers`]: RK4 time integration of incompressible, compressible, and
//!   convected-wave dynamics
//! - [`lagrange`]: flow maps, compositions, the density–Jacobian identity,
//!   and the successive-approximation sequence
//! - [`analysis`]: boundary compatibility conditions and projection, cascade
//!   diagnostics, linearized (sensitivity) dynamics, derivative probes
//! - [`oracle1d`]: closed-form 1-D Burgers flow and sensitivity oracles
//! - [`sweep`]: the k-sweep experiment harness and slope fitting
//! - [`io`]: snapshot files, CSV/JSON/gnuplot emission

pub mod analysis;
pub mod domain;
pub mod elliptic;
pub mod eos;
pub mod error;
pub mod fft;
pub mod io;
pub mod lagrange;
pub mod oracle1d;
pub mod rng;
pub mod solvers;
pub mod sweep;

pub use analysis::{
    cascade, compat_project, compat_residuals, derivative_probe, linearized_solve, BaseTape,
    CascadeReport, CompatReport, ProbeReport, SensitivityState,
};
pub use domain::{
    DomainSpec, Geometry, NormConvention, NormResult, Parity, ScalarField, SobolevIndex,
    Trace1D, VectorField, Wall,
};
pub use elliptic::{
    gradient_part_from_fdot, helmholtz_decompose, laplace_solve, project_solenoidal, LOperator,
    MeanSplit,
};
pub use eos::{c2_material_chain, eos_eval, Eos, EosFamily};
pub use error::{Error, Result};
pub use lagrange::{
    approx_sequence, density_from_jacobian, psi_t, pullback, zrz_operators, ApproxSequence,
    FlowMap, PsiOptions, PullDirection, SequenceOptions,
};
pub use oracle1d::{burgers_exact, burgers_numeric, burgers_sensitivity_exact, Profile1D};
pub use solvers::{
    cfl_dt, compressible_rhs, convected_wave_rhs, incompressible_rhs, CompressibleState,
    EulerState, VelocityTape, WaveState,
};
pub use sweep::{fit_slope, run_sweep, Config, SlopeFit, SweepResult};
