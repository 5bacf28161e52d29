//! Explicit RK4 time integration of the three evolution problems:
//! incompressible Euler in projected form, the compressible (u, f = log ρ)
//! system, and the convected wave equation for f over a prescribed
//! background velocity.
//!
//! The convected wave solver carries (f, φ = ḟ), the material derivative,
//! rather than (f, ∂_t f): f̈ = Lf + F is then a statement about spatial
//! data at one time and the §-style cascade diagnostics read off directly.
//! No implicit or damped treatment of the O(√k) acoustic terms is used —
//! artificial dissipation would contaminate the 1/√k rate measurements.

use crate::domain::{DomainSpec, ScalarField, VectorField};
use crate::elliptic::project_solenoidal;
use crate::eos::{eos_eval, Eos};
use crate::error::{Error, Result};

pub const DEFAULT_CFL: f64 = 0.4;

/// dt = safety · min(Δx, Δy) / (max|u| + √(max c²)).
pub fn cfl_dt(spec: &DomainSpec, max_u: f64, max_c2: f64, safety: f64) -> f64 {
    let h = spec.dx().min(spec.dy());
    let speed = (max_u + max_c2.sqrt()).max(1e-12);
    safety * h / speed
}

/// Incompressible state: divergence-free velocity.
#[derive(Clone)]
pub struct EulerState {
    pub v: VectorField,
    pub t: f64,
}

impl EulerState {
    pub fn new(v: VectorField, t: f64) -> Result<Self> {
        if !v.is_velocity_class() {
            return Err(Error::Parity("EulerState velocity must be slip-class".into()));
        }
        Ok(EulerState { v: project_solenoidal(&v)?, t })
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.v.dot(&self.v).integral()
    }

    pub fn cfl_dt(&self, safety: f64) -> f64 {
        cfl_dt(self.v.spec(), self.v.max_abs(), 0.0, safety)
    }
}

/// −P(∇_v v): the projected form ∂v/∂t + ∇_v v = Q(∇_v v) with p eliminated.
pub fn incompressible_rhs(state: &EulerState) -> Result<VectorField> {
    let conv = state.v.advect_vector(&state.v);
    Ok(project_solenoidal(&conv)?.scale(-1.0))
}

pub fn rk4_euler_step(state: &EulerState, dt: f64) -> Result<EulerState> {
    let s = state;
    let k1 = incompressible_rhs(s)?;
    let s2 = EulerState { v: &s.v + &k1.scale(0.5 * dt), t: s.t + 0.5 * dt };
    let k2 = incompressible_rhs(&s2)?;
    let s3 = EulerState { v: &s.v + &k2.scale(0.5 * dt), t: s.t + 0.5 * dt };
    let k3 = incompressible_rhs(&s3)?;
    let s4 = EulerState { v: &s.v + &k3.scale(dt), t: s.t + dt };
    let k4 = incompressible_rhs(&s4)?;
    let incr = &(&k1 + &k4) + &(&k2 + &k3).scale(2.0);
    let v = &s.v + &incr.scale(dt / 6.0);
    // re-enforce the divergence-free invariant
    let v = project_solenoidal(&v)?;
    if !v.is_finite() {
        return Err(Error::NonFinite { field: "v", t: s.t + dt });
    }
    Ok(EulerState { v, t: s.t + dt })
}

/// Compressible state: velocity and log-density.
#[derive(Clone)]
pub struct CompressibleState {
    pub u: VectorField,
    pub f: ScalarField,
    pub t: f64,
}

impl CompressibleState {
    pub fn new(u: VectorField, f: ScalarField, t: f64) -> Result<Self> {
        if !u.is_velocity_class() {
            return Err(Error::Parity("CompressibleState velocity must be slip-class".into()));
        }
        Ok(CompressibleState { u, f, t })
    }

    /// total mass ∫ e^f
    pub fn mass(&self) -> f64 {
        self.f.map(f64::exp).integral()
    }

    pub fn kinetic_energy(&self) -> f64 {
        0.5 * self.f.map(f64::exp).mul_raw(&self.u.dot(&self.u)).integral()
    }

    /// ḟ = −div u (the continuity identity).
    pub fn fdot(&self) -> ScalarField {
        self.u.div().scale(-1.0)
    }

    pub fn cfl_dt(&self, eos: &Eos, safety: f64) -> Result<f64> {
        let ev = eos_eval(eos, &self.f)?;
        let max_c2 = ev.c2.values().iter().cloned().fold(0.0f64, f64::max);
        Ok(cfl_dt(self.u.spec(), self.u.max_abs(), max_c2, safety))
    }
}

/// du/dt = −∇_u u − c²∇f,  df/dt = −∇_u f − div u (all products dealiased).
pub fn compressible_rhs(
    state: &CompressibleState,
    eos: &Eos,
) -> Result<(VectorField, ScalarField)> {
    let ev = eos_eval(eos, &state.f)?;
    let gradf = state.f.grad();
    let conv = state.u.advect_vector(&state.u);
    let du = VectorField::new(
        (&conv.x + &ev.c2.mul(&gradf.x)).scale(-1.0),
        (&conv.y + &ev.c2.mul(&gradf.y)).scale(-1.0),
    );
    let df = (&state.u.advect_scalar(&state.f) + &state.u.div()).scale(-1.0);
    Ok((du, df))
}

pub fn rk4_compressible_step(
    state: &CompressibleState,
    eos: &Eos,
    dt: f64,
) -> Result<CompressibleState> {
    let add = |s: &CompressibleState, k: &(VectorField, ScalarField), h: f64| CompressibleState {
        u: &s.u + &k.0.scale(h),
        f: &s.f + &k.1.scale(h),
        t: s.t + h,
    };
    let k1 = compressible_rhs(state, eos)?;
    let k2 = compressible_rhs(&add(state, &k1, 0.5 * dt), eos)?;
    let k3 = compressible_rhs(&add(state, &k2, 0.5 * dt), eos)?;
    let k4 = compressible_rhs(&add(state, &k3, dt), eos)?;
    let u = &state.u
        + &(&(&(&k1.0 + &k4.0) + &(&k2.0 + &k3.0).scale(2.0)).scale(dt / 6.0));
    let f = &state.f
        + &(&(&(&k1.1 + &k4.1) + &(&k2.1 + &k3.1).scale(2.0)).scale(dt / 6.0));
    if !u.is_finite() {
        return Err(Error::NonFinite { field: "u", t: state.t + dt });
    }
    if !f.is_finite() {
        return Err(Error::NonFinite { field: "f", t: state.t + dt });
    }
    Ok(CompressibleState { u, f, t: state.t + dt })
}

/// A velocity defined for a time window (solver tapes, analytic flows).
pub trait BackgroundVelocity: Sync {
    fn velocity_at(&self, t: f64) -> Result<VectorField>;
}

/// Time-independent background.
pub struct SteadyVelocity(pub VectorField);

impl BackgroundVelocity for SteadyVelocity {
    fn velocity_at(&self, _t: f64) -> Result<VectorField> {
        Ok(self.0.clone())
    }
}

/// Analytic background u(t).
pub struct FnVelocity<F: Fn(f64) -> VectorField + Sync>(pub F);

impl<F: Fn(f64) -> VectorField + Sync> BackgroundVelocity for FnVelocity<F> {
    fn velocity_at(&self, t: f64) -> Result<VectorField> {
        Ok(self.0(t))
    }
}

/// Uniformly sampled velocity trajectory with 4-point Lagrange interpolation
/// in time (exact at sample times, O(dt⁴) between).
pub struct VelocityTape {
    pub t0: f64,
    pub dt: f64,
    pub samples: Vec<VectorField>,
}

impl VelocityTape {
    pub fn new(t0: f64, dt: f64) -> Self {
        VelocityTape { t0, dt, samples: Vec::new() }
    }

    pub fn push(&mut self, v: VectorField) {
        self.samples.push(v);
    }

    pub fn end_time(&self) -> f64 {
        self.t0 + self.dt * (self.samples.len().max(1) - 1) as f64
    }

    fn lagrange_weights(&self, t: f64) -> Result<(usize, [f64; 4])> {
        let n = self.samples.len();
        if n < 4 {
            return Err(Error::NoBackground(t));
        }
        let tol = 1e-9 * self.dt;
        if t < self.t0 - tol || t > self.end_time() + tol {
            return Err(Error::NoBackground(t));
        }
        let s = ((t - self.t0) / self.dt).floor() as isize;
        let base = (s - 1).clamp(0, n as isize - 4) as usize;
        let mut w = [0.0f64; 4];
        for i in 0..4 {
            let ti = self.t0 + (base + i) as f64 * self.dt;
            let mut prod = 1.0;
            for j in 0..4 {
                if j != i {
                    let tj = self.t0 + (base + j) as f64 * self.dt;
                    prod *= (t - tj) / (ti - tj);
                }
            }
            w[i] = prod;
        }
        Ok((base, w))
    }
}

impl BackgroundVelocity for VelocityTape {
    fn velocity_at(&self, t: f64) -> Result<VectorField> {
        let (base, w) = self.lagrange_weights(t)?;
        let mut x = self.samples[base].x.scale(w[0]);
        let mut y = self.samples[base].y.scale(w[0]);
        for i in 1..4 {
            x = &x + &self.samples[base + i].x.scale(w[i]);
            y = &y + &self.samples[base + i].y.scale(w[i]);
        }
        Ok(VectorField::new(x, y))
    }
}

/// State of the convected wave equation: f and its material derivative.
#[derive(Clone)]
pub struct WaveState {
    pub f: ScalarField,
    /// φ = ḟ = ∂_t f + ∇_u f
    pub phi: ScalarField,
    pub t: f64,
}

/// F = u^i_j u^j_i, the quadratic forcing of the convected wave equation.
pub fn wave_forcing(u: &VectorField) -> ScalarField {
    let ux_x = u.x.dx();
    let ux_y = u.x.dy();
    let uy_x = u.y.dx();
    let uy_y = u.y.dy();
    &(&ux_x.mul(&ux_x) + &uy_y.mul(&uy_y)) + &ux_y.mul(&uy_x).scale(2.0)
}

/// df/dt = φ − ∇_u f,  dφ/dt = −∇_u φ − δ(c²∇f) + F.
pub fn convected_wave_rhs(
    state: &WaveState,
    eos: &Eos,
    background: &dyn BackgroundVelocity,
) -> Result<(ScalarField, ScalarField)> {
    let u = background.velocity_at(state.t)?;
    let ev = eos_eval(eos, &state.f)?;
    let gradf = state.f.grad();
    let lf = &ev.c2.mul(&gradf.x).dx() + &ev.c2.mul(&gradf.y).dy();
    let df = &state.phi - &u.advect_scalar(&state.f);
    let dphi = &(&lf - &u.advect_scalar(&state.phi)) + &wave_forcing(&u);
    Ok((df, dphi))
}

pub fn rk4_wave_step(
    state: &WaveState,
    eos: &Eos,
    background: &dyn BackgroundVelocity,
    dt: f64,
) -> Result<WaveState> {
    let add = |s: &WaveState, k: &(ScalarField, ScalarField), h: f64| WaveState {
        f: &s.f + &k.0.scale(h),
        phi: &s.phi + &k.1.scale(h),
        t: s.t + h,
    };
    let k1 = convected_wave_rhs(state, eos, background)?;
    let k2 = convected_wave_rhs(&add(state, &k1, 0.5 * dt), eos, background)?;
    let k3 = convected_wave_rhs(&add(state, &k2, 0.5 * dt), eos, background)?;
    let k4 = convected_wave_rhs(&add(state, &k3, dt), eos, background)?;
    let f = &state.f + &(&(&(&k1.0 + &k4.0) + &(&k2.0 + &k3.0).scale(2.0)).scale(dt / 6.0));
    let phi =
        &state.phi + &(&(&(&k1.1 + &k4.1) + &(&k2.1 + &k3.1).scale(2.0)).scale(dt / 6.0));
    if !f.is_finite() || !phi.is_finite() {
        return Err(Error::NonFinite { field: "wave f/φ", t: state.t + dt });
    }
    // ∫ḟ = ∫δu = 0: pin the mean (exact only for the self-consistent pair)
    let phi = phi.zero_mean();
    Ok(WaveState { f, phi, t: state.t + dt })
}

/// One row of the solver time-series CSV.
#[derive(Clone, Copy, Debug)]
pub struct TimeSeriesRow {
    pub t: f64,
    pub kinetic: f64,
    pub mass: f64,
    pub f_h4: f64,
    pub fdot_h3: f64,
    pub div_l2: f64,
    pub dt: f64,
}

pub fn timeseries_row(state: &CompressibleState, dt: f64) -> TimeSeriesRow {
    TimeSeriesRow {
        t: state.t,
        kinetic: state.kinetic_energy(),
        mass: state.mass(),
        f_h4: state.f.hs(4.0),
        fdot_h3: state.fdot().hs(3.0),
        div_l2: state.u.div().l2(),
        dt,
    }
}
