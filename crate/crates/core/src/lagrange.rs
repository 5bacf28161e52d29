//! Flow maps ζ(t), compositions with ζ and ζ⁻¹, the density–Jacobian
//! identity, the Z/R/Z̃ operators, the Lagrangian solution map ψ_t, and the
//! successive-approximation sequence.
//!
//! Markers sit on the grid nodes (one per node); velocities are evaluated at
//! marker positions by exact trigonometric summation, and ζ⁻¹ is computed by
//! per-node backward fixed point on the displacement. Displacements are the
//! stored representation, so J(ζ) comes from spectral gradients of grid
//! fields.

use crate::domain::{DomainSpec, Parity, ScalarField, VectorField};
use crate::elliptic::{gradient_part_from_fdot, helmholtz_decompose, project_solenoidal};
use crate::eos::Eos;
use crate::error::{Error, Result};
use crate::solvers::{
    cfl_dt, rk4_compressible_step, rk4_euler_step, rk4_wave_step, BackgroundVelocity,
    CompressibleState, EulerState, VelocityTape, WaveState, DEFAULT_CFL,
};
use ndarray::Array2;
use std::collections::VecDeque;

/// Label coordinates of the marker set (physical grid nodes).
pub fn marker_labels(spec: &DomainSpec) -> Vec<(f64, f64)> {
    let rows = if spec.is_channel() { spec.ny + 1 } else { spec.ny };
    let mut pts = Vec::with_capacity(rows * spec.nx);
    for j in 0..rows {
        for i in 0..spec.nx {
            pts.push((spec.x(i), spec.y(j)));
        }
    }
    pts
}

fn scalar_from_markers(spec: DomainSpec, parity: Parity, vals: &[f64]) -> ScalarField {
    let rows = spec.rows();
    let mut a = Array2::zeros((rows, spec.nx));
    let prows = if spec.is_channel() { spec.ny + 1 } else { spec.ny };
    for j in 0..prows {
        for i in 0..spec.nx {
            a[(j, i)] = vals[j * spec.nx + i];
        }
    }
    if spec.is_channel() {
        let sign = if parity == Parity::OddInY { -1.0 } else { 1.0 };
        for j in spec.ny + 1..rows {
            let m = spec.mirror_row(j);
            for i in 0..spec.nx {
                a[(j, i)] = sign * a[(m, i)];
            }
        }
    }
    ScalarField::from_values(spec, parity, a)
}

fn vector_from_markers(spec: DomainSpec, xs: &[f64], ys: &[f64]) -> VectorField {
    match spec.is_channel() {
        false => VectorField::new(
            scalar_from_markers(spec, Parity::Periodic, xs),
            scalar_from_markers(spec, Parity::Periodic, ys),
        ),
        true => VectorField::new(
            scalar_from_markers(spec, Parity::EvenInY, xs),
            scalar_from_markers(spec, Parity::OddInY, ys),
        ),
    }
}

/// Lagrangian flow map: marker displacements, marker velocities ζ̇, and time.
#[derive(Clone)]
pub struct FlowMap {
    spec: DomainSpec,
    /// ζ − id as grid fields over labels
    pub disp: VectorField,
    /// ζ̇ over labels
    pub vel: VectorField,
    pub t: f64,
}

impl FlowMap {
    /// ζ(0) = id, ζ̇(0) = u₀.
    pub fn identity(u0: &VectorField) -> Self {
        let spec = *u0.spec();
        FlowMap { spec, disp: VectorField::zeros_velocity(spec), vel: u0.clone(), t: 0.0 }
    }

    pub fn from_parts(disp: VectorField, vel: VectorField, t: f64) -> Self {
        FlowMap { spec: *disp.spec(), disp, vel, t }
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    /// Current marker positions (label + displacement, unwrapped).
    pub fn positions(&self) -> Vec<(f64, f64)> {
        let labels = marker_labels(&self.spec);
        let (dx, dy) = marker_values(&self.disp);
        labels
            .iter()
            .zip(dx.iter().zip(dy.iter()))
            .map(|(&(x, y), (&ax, &ay))| (x + ax, y + ay))
            .collect()
    }

    /// J(ζ) = det(I + ∇d) from spectral gradients of the displacement.
    pub fn jacobian(&self) -> ScalarField {
        let ax = self.disp.x.dx();
        let ay = self.disp.x.dy();
        let bx = self.disp.y.dx();
        let by = self.disp.y.dy();
        &ax.add_scalar(1.0).mul(&by.add_scalar(1.0)) - &ay.mul(&bx)
    }

    fn check_jacobian(&self) -> Result<ScalarField> {
        let j = self.jacobian();
        let mut min = f64::INFINITY;
        let mut arg = (0usize, 0usize);
        for ((r, c), &v) in j.values().indexed_iter() {
            if v < min {
                min = v;
                arg = (r, c);
            }
        }
        if min <= 0.0 {
            return Err(Error::DegenerateMap { jac: min, ix: arg.1, iy: arg.0 });
        }
        Ok(j)
    }

    /// RK4 marker advance with velocities interpolated at marker positions.
    pub fn advance(&self, bg: &dyn BackgroundVelocity, dt: f64) -> Result<FlowMap> {
        let labels = marker_labels(&self.spec);
        let n = labels.len();
        let (d0x, d0y) = marker_values(&self.disp);
        let pos0: Vec<(f64, f64)> = labels
            .iter()
            .zip(d0x.iter().zip(d0y.iter()))
            .map(|(&(x, y), (&ax, &ay))| (x + ax, y + ay))
            .collect();

        let stage = |v: &VectorField, pts: &[(f64, f64)]| -> (Vec<f64>, Vec<f64>) {
            (v.x.eval_at(pts), v.y.eval_at(pts))
        };
        let shift = |pts: &[(f64, f64)], kx: &[f64], ky: &[f64], h: f64| -> Vec<(f64, f64)> {
            pts.iter()
                .zip(kx.iter().zip(ky.iter()))
                .map(|(&(x, y), (&a, &b))| (x + h * a, y + h * b))
                .collect()
        };

        let v_t = bg.velocity_at(self.t)?;
        let v_half = bg.velocity_at(self.t + 0.5 * dt)?;
        let v_end = bg.velocity_at(self.t + dt)?;
        let (k1x, k1y) = stage(&v_t, &pos0);
        let (k2x, k2y) = stage(&v_half, &shift(&pos0, &k1x, &k1y, 0.5 * dt));
        let (k3x, k3y) = stage(&v_half, &shift(&pos0, &k2x, &k2y, 0.5 * dt));
        let (k4x, k4y) = stage(&v_end, &shift(&pos0, &k3x, &k3y, dt));

        let mut dx = vec![0.0; n];
        let mut dy = vec![0.0; n];
        let mut px = vec![0.0; n];
        let mut py = vec![0.0; n];
        for i in 0..n {
            dx[i] = d0x[i] + dt / 6.0 * (k1x[i] + 2.0 * (k2x[i] + k3x[i]) + k4x[i]);
            dy[i] = d0y[i] + dt / 6.0 * (k1y[i] + 2.0 * (k2y[i] + k3y[i]) + k4y[i]);
            px[i] = labels[i].0 + dx[i];
            py[i] = labels[i].1 + dy[i];
        }
        let disp = vector_from_markers(self.spec, &dx, &dy);
        if self.spec.is_channel() {
            let eps = 1e-9;
            for (i, &y) in py.iter().enumerate() {
                if !(-eps..=1.0 + eps).contains(&y) {
                    return Err(Error::DegenerateMap {
                        jac: y,
                        ix: i % self.spec.nx,
                        iy: i / self.spec.nx,
                    });
                }
            }
        }
        let pos_new: Vec<(f64, f64)> =
            px.iter().zip(py.iter()).map(|(&a, &b)| (a, b)).collect();
        let (vx, vy) = stage(&v_end, &pos_new);
        let vel = vector_from_markers(self.spec, &vx, &vy);
        let flow = FlowMap { spec: self.spec, disp, vel, t: self.t + dt };
        flow.check_jacobian()?;
        Ok(flow)
    }
}

/// Build a velocity-class vector field from marker-ordered component values.
pub fn vector_from_marker_values(spec: DomainSpec, xs: &[f64], ys: &[f64]) -> VectorField {
    vector_from_markers(spec, xs, ys)
}

/// Marker-ordered values of a grid field (markers are grid nodes).
fn marker_values(v: &VectorField) -> (Vec<f64>, Vec<f64>) {
    let spec = *v.spec();
    let prows = if spec.is_channel() { spec.ny + 1 } else { spec.ny };
    let mut xs = Vec::with_capacity(prows * spec.nx);
    let mut ys = Vec::with_capacity(prows * spec.nx);
    for j in 0..prows {
        for i in 0..spec.nx {
            xs.push(v.x.values()[(j, i)]);
            ys.push(v.y.values()[(j, i)]);
        }
    }
    (xs, ys)
}

/// Which way to compose a field with the flow.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PullDirection {
    /// field ∘ ζ: evaluate at marker positions (exact trig evaluation)
    WithZeta,
    /// field ∘ ζ⁻¹: per-node backward characteristic solve
    WithZetaInverse,
}

/// ζ⁻¹ as labels-per-grid-node, solved once and reusable for many fields.
pub struct BackwardMap {
    spec: DomainSpec,
    labels: Vec<(f64, f64)>,
}

pub const BACKWARD_TOL: f64 = 1e-10;
pub const BACKWARD_MAX_ITER: usize = 50;

impl BackwardMap {
    pub fn compute(flow: &FlowMap) -> Result<Self> {
        Self::compute_warm(flow, None)
    }

    /// Newton on the displacement: a ← a − (I + ∇d(a))⁻¹(a + d(a) − x),
    /// seeded by the fixed-point guess a₀ = x − d(x) (or a previous solution
    /// from an adjacent time level via `warm`).
    pub fn compute_warm(flow: &FlowMap, warm: Option<&BackwardMap>) -> Result<Self> {
        let spec = flow.spec;
        let nodes = marker_labels(&spec);
        let dxx = flow.disp.x.dx();
        let dxy = flow.disp.x.dy();
        let dyx = flow.disp.y.dx();
        let dyy = flow.disp.y.dy();
        let mut a: Vec<(f64, f64)> = match warm {
            Some(w) => w.labels.clone(),
            None => {
                let dx = flow.disp.x.eval_at(&nodes);
                let dy = flow.disp.y.eval_at(&nodes);
                nodes
                    .iter()
                    .zip(dx.iter().zip(dy.iter()))
                    .map(|(&(x, y), (&ax, &ay))| (x - ax, y - ay))
                    .collect()
            }
        };
        let mut worst = f64::INFINITY;
        let mut arg = 0usize;
        for _ in 0..BACKWARD_MAX_ITER {
            let dx = flow.disp.x.eval_at(&a);
            let dy = flow.disp.y.eval_at(&a);
            let gxx = dxx.eval_at(&a);
            let gxy = dxy.eval_at(&a);
            let gyx = dyx.eval_at(&a);
            let gyy = dyy.eval_at(&a);
            worst = 0.0;
            for (i, cand) in a.iter_mut().enumerate() {
                let rx = cand.0 + dx[i] - nodes[i].0;
                let ry = cand.1 + dy[i] - nodes[i].1;
                let r = (rx * rx + ry * ry).sqrt();
                if r > worst {
                    worst = r;
                    arg = i;
                }
                // (I + ∇d) solve, 2×2; cap the step at 3× the plain
                // fixed-point step so near-singular Jacobians cannot fling
                // the iterate out of the contraction basin
                let (j11, j12, j21, j22) = (1.0 + gxx[i], gxy[i], gyx[i], 1.0 + gyy[i]);
                let det = j11 * j22 - j12 * j21;
                let (mut sx, mut sy) = if det.abs() > 1e-12 {
                    ((j22 * rx - j12 * ry) / det, (-j21 * rx + j11 * ry) / det)
                } else {
                    (rx, ry)
                };
                let step = (sx * sx + sy * sy).sqrt();
                if step > 3.0 * r && step > 0.0 {
                    let cap = 3.0 * r / step;
                    sx *= cap;
                    sy *= cap;
                }
                cand.0 -= sx;
                cand.1 -= sy;
            }
            if worst <= BACKWARD_TOL {
                return Ok(BackwardMap { spec, labels: a });
            }
        }
        Err(Error::BackwardSolve {
            ix: arg % spec.nx,
            iy: arg / spec.nx,
            residual: worst,
        })
    }

    /// (field ∘ ζ⁻¹) on the grid; `field` lives over labels.
    pub fn apply(&self, field: &ScalarField) -> ScalarField {
        let vals = field.eval_at(&self.labels);
        scalar_from_markers(self.spec, field.parity(), &vals)
    }

    pub fn apply_vector(&self, v: &VectorField) -> VectorField {
        VectorField::new(self.apply(&v.x), self.apply(&v.y))
    }
}

/// Compose a label-space field with ζ (evaluate at positions) or ζ⁻¹
/// (backward solve per node).
pub fn pullback(field: &ScalarField, flow: &FlowMap, dir: PullDirection) -> Result<ScalarField> {
    match dir {
        PullDirection::WithZeta => {
            let pos = flow.positions();
            let vals = field.eval_at(&pos);
            Ok(scalar_from_markers(*field.spec(), field.parity(), &vals))
        }
        PullDirection::WithZetaInverse => Ok(BackwardMap::compute(flow)?.apply(field)),
    }
}

/// Lagrangian reconstruction of log-density: the transported identity
/// (f − h)∘ζ = f₀ with h = −log(J(ζ))∘ζ⁻¹ gives, in Eulerian form,
/// f(t) = (f₀ − log J(ζ(t)))∘ζ(t)⁻¹ (the initial datum rides the flow).
pub fn density_from_jacobian(flow: &FlowMap, f0: &ScalarField) -> Result<ScalarField> {
    let j = flow.check_jacobian()?;
    let lagrangian = f0 - &j.map(f64::ln);
    pullback(&lagrangian, flow, PullDirection::WithZetaInverse)
}

pub struct ZrzOutput {
    pub z: VectorField,
    pub r: VectorField,
    pub ztilde: VectorField,
}

/// Z(ξ,α) = (Q(∇_{α∘ξ⁻¹} P(α∘ξ⁻¹)))∘ξ, R(ξ,α) = (P(∇_{α∘ξ⁻¹} Q(α∘ξ⁻¹)))∘ξ,
/// Z̃ = Z − R.
pub fn zrz_operators(flow: &FlowMap, alpha: &VectorField) -> Result<ZrzOutput> {
    let bwd = BackwardMap::compute(flow)?;
    zrz_with_backward(flow, alpha, &bwd)
}

pub fn zrz_with_backward(
    flow: &FlowMap,
    alpha: &VectorField,
    bwd: &BackwardMap,
) -> Result<ZrzOutput> {
    let v = bwd.apply_vector(alpha);
    let (pv, qv) = helmholtz_decompose(&v)?;
    let (_, z_eul) = helmholtz_decompose(&v.advect_vector(&pv))?;
    let (r_eul, _) = helmholtz_decompose(&v.advect_vector(&qv))?;
    let pos = flow.positions();
    let compose = |w: &VectorField| -> VectorField {
        let xs = w.x.eval_at(&pos);
        let ys = w.y.eval_at(&pos);
        vector_from_markers(*flow.spec(), &xs, &ys)
    };
    let z = compose(&z_eul);
    let r = compose(&r_eul);
    let ztilde = &z - &r;
    Ok(ZrzOutput { z, r, ztilde })
}

/// Ring buffer of recent solver velocities, the background for marker
/// substeps inside co-integration loops.
pub struct RingTape {
    dt: f64,
    first_index: usize,
    window: VecDeque<VectorField>,
    cap: usize,
}

impl RingTape {
    pub fn new(dt: f64, cap: usize) -> Self {
        RingTape { dt, first_index: 0, window: VecDeque::new(), cap: cap.max(5) }
    }

    pub fn push(&mut self, v: VectorField) {
        if self.window.len() == self.cap {
            self.window.pop_front();
            self.first_index += 1;
        }
        self.window.push_back(v);
    }
}

impl BackgroundVelocity for RingTape {
    fn velocity_at(&self, t: f64) -> Result<VectorField> {
        let n = self.window.len();
        if n == 0 {
            return Err(Error::NoBackground(t));
        }
        let t0 = self.first_index as f64 * self.dt;
        let s = (t - t0) / self.dt;
        if s < -1e-9 || s > (n - 1) as f64 + 1e-9 {
            return Err(Error::NoBackground(t));
        }
        // Lagrange interpolation over up to 4 window samples; the order
        // degrades only during the first few solver steps of a run.
        let stencil = n.min(4);
        let base = ((s.floor() as isize) - 1).clamp(0, n as isize - stencil as isize) as usize;
        let mut acc: Option<VectorField> = None;
        for i in 0..stencil {
            let ti = (base + i) as f64;
            let mut w = 1.0;
            for j in 0..stencil {
                if j != i {
                    let tj = (base + j) as f64;
                    w *= (s - tj) / (ti - tj);
                }
            }
            let term = VectorField::new(
                self.window[base + i].x.scale(w),
                self.window[base + i].y.scale(w),
            );
            acc = Some(match acc {
                None => term,
                Some(a) => &a + &term,
            });
        }
        Ok(acc.unwrap())
    }
}

/// Options for ψ_t and the co-integrated compressible/flow run.
#[derive(Clone, Copy, Debug)]
pub struct PsiOptions {
    pub dt_safety: f64,
    /// marker substep in solver steps (0 = automatic from the acoustic rate)
    pub marker_substep: usize,
    /// dominant acoustic mode used by the automatic substep choice
    pub acoustic_mode: f64,
}

impl Default for PsiOptions {
    fn default() -> Self {
        PsiOptions { dt_safety: DEFAULT_CFL, marker_substep: 0, acoustic_mode: 2.0 }
    }
}

fn auto_substep(spec: &DomainSpec, k: f64, dt: f64, mode: f64) -> usize {
    let omega = k.sqrt() * crate::domain::TWO_PI * mode / spec.lx;
    let target = 0.35 / omega;
    let m = (target / dt).floor() as usize;
    m.clamp(1, 64).max(1)
}

/// The Lagrangian solution map: run the compressible solver and the flow map
/// together and return (ζ(t), ζ̇(t)) with the final Eulerian state.
pub struct PsiRun {
    pub flow: FlowMap,
    pub state: CompressibleState,
    pub solver_dt: f64,
    pub marker_substep: usize,
}

pub fn psi_t(
    u0: &VectorField,
    log_rho0: &ScalarField,
    eos: &Eos,
    t_final: f64,
    opts: PsiOptions,
) -> Result<PsiRun> {
    psi_t_observed(u0, log_rho0, eos, t_final, opts, |_, _| {})
}

/// ψ_t with an observer called after every flow update (state, flow).
pub fn psi_t_observed(
    u0: &VectorField,
    log_rho0: &ScalarField,
    eos: &Eos,
    t_final: f64,
    opts: PsiOptions,
    mut observe: impl FnMut(&CompressibleState, &FlowMap),
) -> Result<PsiRun> {
    let spec = *u0.spec();
    if spec.is_channel() {
        let report = crate::analysis::compat_residuals(u0, log_rho0, eos)?;
        let scale = (1.0 + u0.hs(3.0)).powi(2) * (1.0 + eos.k * log_rho0.hs(4.0));
        if report.max_residual() > 1e-6 * scale {
            return Err(Error::Unphysical(format!(
                "initial data violates the boundary compatibility conditions \
                 (max residual {:.3e}); project it first",
                report.max_residual()
            )));
        }
    }
    let mut state = CompressibleState::new(u0.clone(), log_rho0.clone(), 0.0)?;
    if t_final <= 0.0 {
        let flow = FlowMap::identity(u0);
        return Ok(PsiRun { flow, state, solver_dt: 0.0, marker_substep: 1 });
    }
    let dt0 = state.cfl_dt(eos, opts.dt_safety)?;
    let m = if opts.marker_substep > 0 {
        opts.marker_substep
    } else {
        auto_substep(&spec, eos.k, dt0, opts.acoustic_mode)
    };
    // align the step count with the marker substep
    let chunks = (t_final / (dt0 * m as f64)).ceil().max(1.0) as usize;
    let dt = t_final / (chunks * m) as f64;

    let mut flow = FlowMap::identity(u0);
    let mut ring = RingTape::new(dt, m + 6);
    ring.push(state.u.clone());
    let mut step = 0usize;
    for _ in 0..chunks {
        for _ in 0..m {
            let dt_max = state.cfl_dt(eos, opts.dt_safety)?;
            if dt > dt_max * 1.05 {
                return Err(Error::Cfl { dt, dt_max });
            }
            state = rk4_compressible_step(&state, eos, dt)?;
            ring.push(state.u.clone());
            step += 1;
        }
        let _ = step;
        flow = flow.advance(&ring, dt * m as f64)?;
        observe(&state, &flow);
    }
    Ok(PsiRun { flow, state, solver_dt: dt, marker_substep: m })
}

/// 4th-order cumulative integral of a uniformly sampled field trajectory.
pub fn cumulative_integral(dt: f64, vals: &[VectorField]) -> Vec<VectorField> {
    let n = vals.len();
    assert!(n >= 4, "cumulative integral needs ≥ 4 nodes");
    let spec = *vals[0].spec();
    let mut out = Vec::with_capacity(n);
    out.push(VectorField::zeros_velocity(spec));
    let lincomb = |terms: &[(f64, usize)]| -> VectorField {
        let mut acc = VectorField::zeros_velocity(spec);
        for &(w, i) in terms {
            acc = &acc + &vals[i].scale(w * dt / 24.0);
        }
        acc
    };
    for j in 1..n {
        let seg = if j == 1 {
            lincomb(&[(9.0, 0), (19.0, 1), (-5.0, 2), (1.0, 3)])
        } else if j + 1 < n {
            lincomb(&[(-1.0, j - 2), (13.0, j - 1), (13.0, j), (-1.0, j + 1)])
        } else {
            lincomb(&[(1.0, j - 3), (-5.0, j - 2), (19.0, j - 1), (9.0, j)])
        };
        out.push(&out[j - 1] + &seg);
    }
    out
}

/// One level of the successive-approximation sequence: the node trajectory
/// of (ζ_n − id, ζ̇_n) plus the level's gradient-part diagnostics.
pub struct SequenceLevel {
    pub n: usize,
    pub times: Vec<f64>,
    pub disp: Vec<VectorField>,
    pub vel: Vec<VectorField>,
    /// sup over nodes of ‖∇g_n(t)‖₃ (zero for the incompressible level)
    pub grad_g_sup_h3: f64,
    pub picard_iters: usize,
}

impl SequenceLevel {
    /// u_n(t_j) = ζ̇_n(t_j) ∘ ζ_n(t_j)⁻¹.
    pub fn eulerian_velocity(&self, j: usize) -> Result<VectorField> {
        let flow = FlowMap::from_parts(self.disp[j].clone(), self.vel[j].clone(), self.times[j]);
        let bwd = BackwardMap::compute(&flow)?;
        Ok(bwd.apply_vector(&self.vel[j]))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SequenceOptions {
    pub n_max: usize,
    pub t_final: f64,
    pub dt_safety: f64,
    pub picard_tol: f64,
    pub picard_max: usize,
    pub relax: f64,
    /// Experiment flag (documented open question): add ∇g_n(0) to the
    /// initial marker velocity instead of plain P u₀.
    pub seed_initial_gradient: bool,
    /// dominant acoustic mode for node spacing (nodes resolve √k·2π·mode/lx)
    pub acoustic_mode: f64,
    /// target ω·Δt of the node grid (quadrature phase resolution)
    pub node_resolution: f64,
    /// minimum number of trajectory nodes
    pub min_nodes: usize,
}

impl Default for SequenceOptions {
    fn default() -> Self {
        SequenceOptions {
            n_max: 2,
            t_final: 0.25,
            dt_safety: DEFAULT_CFL,
            picard_tol: 1e-8,
            picard_max: 60,
            relax: 0.8,
            seed_initial_gradient: false,
            acoustic_mode: 1.0,
            node_resolution: 0.30,
            min_nodes: 32,
        }
    }
}

pub struct ApproxSequence {
    pub k: f64,
    pub levels: Vec<SequenceLevel>,
    pub node_dt: f64,
}

impl ApproxSequence {
    /// sup over nodes of the H³ pair norm ‖(ζ_n − ζ_m, ζ̇_n − ζ̇_m)‖₃.
    pub fn lagrangian_increment(&self, n: usize, m: usize) -> f64 {
        let (a, b) = (&self.levels[n], &self.levels[m]);
        let mut sup: f64 = 0.0;
        for j in 0..a.times.len() {
            let dd = (&a.disp[j] - &b.disp[j]).hs(3.0);
            let dv = (&a.vel[j] - &b.vel[j]).hs(3.0);
            sup = sup.max((dd * dd + dv * dv).sqrt());
        }
        sup
    }

    /// sup over sample nodes of ‖u_n − u_m‖₁ (Eulerian increments).
    pub fn eulerian_increment(&self, n: usize, m: usize, samples: usize) -> Result<f64> {
        let nodes = self.levels[n].times.len();
        let stride = (nodes / samples.max(1)).max(1);
        let mut sup: f64 = 0.0;
        for j in (stride..nodes).step_by(stride) {
            let un = self.levels[n].eulerian_velocity(j)?;
            let um = self.levels[m].eulerian_velocity(j)?;
            sup = sup.max((&un - &um).hs(1.0));
        }
        Ok(sup)
    }
}

/// Build the sequence ζ₀ = η (incompressible), then for n ≥ 1 solve the
/// convected wave equation for f_n over background u_{n−1}, reconstruct
/// ∇g_n = −∇Δ⁻¹ḟ_n, and solve the flow integral equation
/// ζ̇_n = P u₀ + ∫ Z̃(ζ_n, ζ̇_n) + ∇g_n∘ζ_n by relaxed Picard iteration.
pub fn approx_sequence(
    u0: &VectorField,
    log_rho0: &ScalarField,
    eos: &Eos,
    opts: SequenceOptions,
) -> Result<ApproxSequence> {
    if opts.n_max > 3 {
        return Err(Error::Config("sequence levels beyond n = 3 are out of scope".into()));
    }
    let spec = *u0.spec();
    let k = eos.k;
    // node spacing resolves the dominant acoustic frequency
    let omega = k.sqrt() * crate::domain::TWO_PI * opts.acoustic_mode / spec.lx;
    let node_dt_target = (opts.node_resolution / omega).min(opts.t_final / opts.min_nodes as f64);
    let nodes = (opts.t_final / node_dt_target).ceil() as usize + 1;
    let nodes = nodes.max(opts.min_nodes);
    let node_dt = opts.t_final / (nodes - 1) as f64;
    let times: Vec<f64> = (0..nodes).map(|j| j as f64 * node_dt).collect();

    // --- level 0: incompressible flow η with ζ̇₀(0) = P u₀ ---
    let v0 = project_solenoidal(u0)?;
    let mut euler = EulerState::new(v0.clone(), 0.0)?;
    // integrate at half the node spacing so flow stages see exact samples
    let dt_e = 0.5 * node_dt;
    let mut vtape = VelocityTape::new(0.0, dt_e);
    vtape.push(euler.v.clone());
    for _ in 0..2 * (nodes - 1) {
        euler = rk4_euler_step(&euler, dt_e)?;
        vtape.push(euler.v.clone());
    }
    let mut flow = FlowMap::identity(&v0);
    let mut disp0 = vec![flow.disp.clone()];
    let mut vel0 = vec![flow.vel.clone()];
    for _ in 1..nodes {
        flow = flow.advance(&vtape, node_dt)?;
        disp0.push(flow.disp.clone());
        vel0.push(flow.vel.clone());
    }
    let mut levels = vec![SequenceLevel {
        n: 0,
        times: times.clone(),
        disp: disp0,
        vel: vel0,
        grad_g_sup_h3: 0.0,
        picard_iters: 0,
    }];

    let pu0 = v0.clone();
    for n in 1..=opts.n_max {
        // --- background u_{n−1} at node times ---
        let bg_tape: VelocityTape = if n == 1 {
            // u₀ is the incompressible solution itself
            let mut t = VelocityTape::new(0.0, dt_e);
            t.samples = vtape.samples.clone();
            t
        } else {
            let prev = &levels[n - 1];
            let mut t = VelocityTape::new(0.0, node_dt);
            let mut warm: Option<BackwardMap> = None;
            for j in 0..nodes {
                let fl = FlowMap::from_parts(
                    prev.disp[j].clone(),
                    prev.vel[j].clone(),
                    prev.times[j],
                );
                let bwd = BackwardMap::compute_warm(&fl, warm.as_ref())?;
                t.push(bwd.apply_vector(&prev.vel[j]));
                warm = Some(bwd);
            }
            t
        };

        // --- convected wave solve for f_n over u_{n−1} ---
        let mut ws = WaveState {
            f: log_rho0.clone(),
            phi: u0.div().scale(-1.0),
            t: 0.0,
        };
        let dt_w0 = cfl_dt(&spec, bg_tape.samples[0].max_abs() + u0.max_abs(), k, opts.dt_safety);
        let m_w = (node_dt / dt_w0).ceil().max(1.0) as usize;
        let dt_w = node_dt / m_w as f64;
        let mut grad_g: Vec<VectorField> = Vec::with_capacity(nodes);
        let mut grad_sup: f64 = 0.0;
        let g0 = gradient_part_from_fdot(&ws.phi)?;
        grad_sup = grad_sup.max(g0.hs(3.0));
        grad_g.push(g0);
        for _ in 1..nodes {
            for _ in 0..m_w {
                ws = rk4_wave_step(&ws, eos, &bg_tape, dt_w)?;
            }
            let g = gradient_part_from_fdot(&ws.phi)?;
            grad_sup = grad_sup.max(g.hs(3.0));
            grad_g.push(g);
        }

        // --- Picard iteration for the flow integral equation ---
        let seed_vel0 = if opts.seed_initial_gradient { &pu0 + &grad_g[0] } else { pu0.clone() };
        let mut disp: Vec<VectorField> = levels[n - 1].disp.clone();
        let mut vel: Vec<VectorField> = levels[n - 1].vel.clone();
        let mut prev_dist = f64::INFINITY;
        let mut grew = 0usize;
        let mut iters = 0usize;
        let scale = 1.0 + u0.hs(3.0);
        // per-node backward maps, warm-started across Picard iterations
        let mut backward: Vec<Option<BackwardMap>> = (0..nodes).map(|_| None).collect();
        for it in 1..=opts.picard_max {
            iters = it;
            // Z̃ and the composed gradient part at every node
            use rayon::prelude::*;
            let evaluations: Result<Vec<(VectorField, VectorField, BackwardMap)>> = (0..nodes)
                .into_par_iter()
                .map(|j| {
                    let fl = FlowMap::from_parts(disp[j].clone(), vel[j].clone(), times[j]);
                    let bwd = BackwardMap::compute_warm(&fl, backward[j].as_ref())?;
                    let zrz = zrz_with_backward(&fl, &vel[j], &bwd)?;
                    let pos = fl.positions();
                    let gx = grad_g[j].x.eval_at(&pos);
                    let gy = grad_g[j].y.eval_at(&pos);
                    let comp = vector_from_markers(spec, &gx, &gy);
                    Ok((zrz.ztilde, comp, bwd))
                })
                .collect();
            let mut ztilde: Vec<VectorField> = Vec::with_capacity(nodes);
            let mut comps: Vec<VectorField> = Vec::with_capacity(nodes);
            for (j, (zt, comp, bwd)) in evaluations?.into_iter().enumerate() {
                ztilde.push(zt);
                comps.push(comp);
                backward[j] = Some(bwd);
            }
            let integral = cumulative_integral(node_dt, &ztilde);
            let mut new_vel: Vec<VectorField> = Vec::with_capacity(nodes);
            for j in 0..nodes {
                let candidate = &(&seed_vel0 + &integral[j]) + &comps[j];
                let relaxed = &vel[j].scale(1.0 - opts.relax) + &candidate.scale(opts.relax);
                new_vel.push(relaxed);
            }
            let new_disp = cumulative_integral(node_dt, &new_vel);
            let mut dist: f64 = 0.0;
            for j in 0..nodes {
                dist = dist.max((&new_vel[j] - &vel[j]).hs(3.0));
                dist = dist.max((&new_disp[j] - &disp[j]).hs(3.0));
            }
            vel = new_vel;
            disp = new_disp;
            if dist <= opts.picard_tol * scale {
                break;
            }
            if dist > prev_dist {
                grew += 1;
                if grew >= 2 {
                    return Err(Error::NotContracting);
                }
            }
            prev_dist = dist;
            if it == opts.picard_max {
                return Err(Error::NotContracting);
            }
        }
        levels.push(SequenceLevel {
            n,
            times: times.clone(),
            disp,
            vel,
            grad_g_sup_h3: grad_sup,
            picard_iters: iters,
        });
    }
    Ok(ApproxSequence { k, levels, node_dt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{random_solenoidal, DomainSpec, TWO_PI};
    use crate::rng::Rng;
    use crate::solvers::{FnVelocity, SteadyVelocity};

    fn torus(n: usize) -> DomainSpec {
        DomainSpec::torus(n, n, 1.0)
    }

    #[test]
    fn constant_velocity_translates_markers() {
        let spec = torus(16);
        let c = (0.3, -0.2);
        let u = VectorField::new(
            ScalarField::constant(spec, c.0),
            ScalarField::constant(spec, c.1),
        );
        let mut flow = FlowMap::identity(&u);
        let bg = SteadyVelocity(u.clone());
        let dt = 0.05;
        for _ in 0..10 {
            flow = flow.advance(&bg, dt).unwrap();
        }
        let t = 0.5;
        assert!((flow.disp.x.values()[(3, 5)] - c.0 * t).abs() < 1e-12);
        assert!((flow.disp.y.values()[(7, 1)] - c.1 * t).abs() < 1e-12);
        let j = flow.jacobian();
        assert!(j.add_scalar(-1.0).max_abs() < 1e-12);
    }

    #[test]
    fn channel_shear_is_area_preserving() {
        let spec = DomainSpec::channel(16, 16, 1.0);
        let u = VectorField::new(
            ScalarField::from_fn(spec, Parity::EvenInY, |_, y| {
                (std::f64::consts::PI * y).cos()
            }),
            ScalarField::zeros(spec, Parity::OddInY),
        );
        let bg = SteadyVelocity(u.clone());
        let mut flow = FlowMap::identity(&u);
        for _ in 0..8 {
            flow = flow.advance(&bg, 0.05).unwrap();
        }
        let t = 0.4;
        // ζ = (x + t·U(y), y): J ≡ 1, wall markers stay on walls
        assert!(flow.jacobian().add_scalar(-1.0).max_abs() < 1e-11);
        assert!(flow.disp.y.max_abs() < 1e-12);
        let expect = |y: f64| t * (std::f64::consts::PI * y).cos();
        assert!((flow.disp.x.values()[(4, 2)] - expect(spec.y(4))).abs() < 1e-11);
    }

    /// d(log J)/dt along markers = (div u)∘ζ, checked with centered time
    /// differences on a generic smooth compressible velocity; the error must
    /// shrink ~4× when dt halves.
    #[test]
    fn jacobian_rate_matches_divergence_oracle() {
        let spec = torus(32);
        let u_fn = |t: f64| -> VectorField {
            VectorField::new(
                ScalarField::from_fn(spec, Parity::Periodic, move |x, y| {
                    0.3 * (TWO_PI * x).sin() * (TWO_PI * y).cos() * (1.0 + 0.5 * t)
                }),
                ScalarField::from_fn(spec, Parity::Periodic, move |x, y| {
                    0.2 * (TWO_PI * (x + y)).cos() * (1.0 - 0.3 * t)
                }),
            )
        };
        let bg = FnVelocity(u_fn);
        let t_mid = 0.08;
        let err_at = |dt: f64| -> f64 {
            let steps = (t_mid / dt).round() as usize;
            let mut flow = FlowMap::identity(&u_fn(0.0));
            for _ in 0..steps - 1 {
                flow = flow.advance(&bg, dt).unwrap();
            }
            let log_m = flow.jacobian().map(f64::ln);
            let mid = flow.advance(&bg, dt).unwrap();
            let log_p = mid.advance(&bg, dt).unwrap().jacobian().map(f64::ln);
            let rate = (&log_p - &log_m).scale(1.0 / (2.0 * dt));
            let dvals = u_fn(mid.t).div().eval_at(&mid.positions());
            let composed = scalar_from_markers(spec, Parity::Periodic, &dvals);
            (&rate - &composed).max_abs()
        };
        let e1 = err_at(0.02);
        let e2 = err_at(0.01);
        assert!(e1 / e2 > 3.0, "O(dt²) rate check: {e1:.3e} vs {e2:.3e}");
    }

    #[test]
    fn pullback_identity_and_translation() {
        let spec = torus(32);
        let mut rng = Rng::new(71);
        let field = crate::domain::random_scalar(spec, Parity::Periodic, 4, &mut rng);
        let zero_u = VectorField::zeros_velocity(spec);
        let id = FlowMap::identity(&zero_u);
        let same = pullback(&field, &id, PullDirection::WithZeta).unwrap();
        assert!((&same - &field).max_abs() < 1e-11);
        let same2 = pullback(&field, &id, PullDirection::WithZetaInverse).unwrap();
        assert!((&same2 - &field).max_abs() < 1e-11);

        // translation flow: ζ = x + a ⇒ field∘ζ⁻¹ is the field shifted by +a
        let a = (0.13, -0.27);
        let disp = VectorField::new(
            ScalarField::constant(spec, a.0),
            ScalarField::constant(spec, a.1),
        );
        let flow = FlowMap::from_parts(disp, zero_u.clone(), 1.0);
        let shifted = pullback(&field, &flow, PullDirection::WithZetaInverse).unwrap();
        let expect = ScalarField::from_fn(spec, Parity::Periodic, |x, y| {
            field.eval_at_one(x - a.0, y - a.1)
        });
        assert!((&shifted - &expect).max_abs() < 1e-10);
    }

    /// Normalize a random solenoidal field to a given max speed so the test
    /// flows stay desk-scale (moderate deformation, contractive ζ⁻¹ solves).
    fn gentle_flow(spec: DomainSpec, modes: usize, rng: &mut Rng, target: f64) -> VectorField {
        let u = random_solenoidal(spec, modes, rng);
        u.scale(target / u.max_abs())
    }

    #[test]
    fn pullback_roundtrip_on_smooth_flow() {
        let spec = torus(32);
        let mut rng = Rng::new(73);
        let field = crate::domain::random_scalar(spec, Parity::Periodic, 3, &mut rng);
        let u = gentle_flow(spec, 2, &mut rng, 0.3);
        let bg = SteadyVelocity(u.clone());
        let mut flow = FlowMap::identity(&u);
        for _ in 0..10 {
            flow = flow.advance(&bg, 0.01).unwrap();
        }
        let fwd = pullback(&field, &flow, PullDirection::WithZeta).unwrap();
        let back = pullback(&fwd, &flow, PullDirection::WithZetaInverse).unwrap();
        let err = (&back - &field).max_abs();
        assert!(err <= 1e-8 * field.max_abs().max(1.0), "roundtrip err {err:.3e}");
    }

    #[test]
    fn volume_is_preserved_by_solenoidal_flows() {
        let spec = torus(32);
        let mut rng = Rng::new(79);
        let u = gentle_flow(spec, 3, &mut rng, 0.5);
        let bg = SteadyVelocity(u.clone());
        let mut flow = FlowMap::identity(&u);
        for _ in 0..20 {
            flow = flow.advance(&bg, 5e-3).unwrap();
        }
        assert!(flow.jacobian().add_scalar(-1.0).max_abs() <= 1e-8);
    }

    #[test]
    fn reversed_flow_returns_markers() {
        let spec = torus(32);
        let mut rng = Rng::new(83);
        let u = gentle_flow(spec, 2, &mut rng, 0.5);
        let fwd = SteadyVelocity(u.clone());
        let bwd = SteadyVelocity(u.scale(-1.0));
        let mut flow = FlowMap::identity(&u);
        let dt = 0.01;
        for _ in 0..20 {
            flow = flow.advance(&fwd, dt).unwrap();
        }
        for _ in 0..20 {
            flow = flow.advance(&bwd, dt).unwrap();
        }
        // group-property sanity: O(dt⁴·steps) return accuracy
        let err = flow.disp.max_abs();
        assert!(err < 40.0 * dt.powi(4) + 1e-10, "return error {err:.3e}");
    }

    #[test]
    fn density_identity_trivial_cases() {
        let spec = torus(16);
        let mut rng = Rng::new(89);
        let f0 = crate::domain::random_scalar(spec, Parity::Periodic, 3, &mut rng);
        // J ≡ 1 (identity flow) → f = f0
        let id = FlowMap::identity(&VectorField::zeros_velocity(spec));
        let f = density_from_jacobian(&id, &f0).unwrap();
        assert!((&f - &f0).max_abs() < 1e-12);
    }

    #[test]
    fn zrz_at_identity_reduces_to_projected_advection() {
        let spec = torus(32);
        let mut rng = Rng::new(97);
        let alpha = random_solenoidal(spec, 3, &mut rng);
        let id = FlowMap::identity(&alpha);
        let out = zrz_operators(&id, &alpha).unwrap();
        // Z(id, v) = Q(∇_v P v); for solenoidal v, Q(v)=0 so R = 0
        let (pv, _) = helmholtz_decompose(&alpha).unwrap();
        let (_, expect_z) = helmholtz_decompose(&alpha.advect_vector(&pv)).unwrap();
        assert!((&out.z - &expect_z).l2() <= 1e-9 * expect_z.l2().max(1e-30));
        assert!(out.r.l2() <= 1e-10 * alpha.l2());
        let diff = (&out.ztilde - &(&out.z - &out.r)).l2();
        assert!(diff == 0.0);
    }

    #[test]
    fn psi_t_degenerate_cases() {
        let spec = torus(16);
        let eos = Eos::gamma_law(400.0, 1.4);
        let mut rng = Rng::new(101);
        let u0 = random_solenoidal(spec, 2, &mut rng).scale(0.3);
        let f0 = ScalarField::zeros(spec, Parity::Periodic);
        // t = 0 → (id, u0)
        let run = psi_t(&u0, &f0, &eos, 0.0, PsiOptions::default()).unwrap();
        assert!(run.flow.disp.max_abs() == 0.0);
        assert!((&run.flow.vel - &u0).max_abs() == 0.0);
        // equilibrium stays put
        let rest = psi_t(
            &VectorField::zeros_velocity(spec),
            &f0,
            &eos,
            0.05,
            PsiOptions::default(),
        )
        .unwrap();
        assert!(rest.flow.disp.max_abs() < 1e-13);
        assert!(rest.flow.vel.max_abs() < 1e-13);
    }

    #[test]
    fn cumulative_integral_is_fourth_order() {
        let spec = torus(8);
        let f = |t: f64| -> VectorField {
            VectorField::new(
                ScalarField::constant(spec, (2.0 * t).sin()),
                ScalarField::constant(spec, (3.0 * t).cos()),
            )
        };
        let exact = |t: f64| -> (f64, f64) {
            ((1.0 - (2.0 * t).cos()) / 2.0, (3.0 * t).sin() / 3.0)
        };
        let mut errs = Vec::new();
        for n in [17usize, 33] {
            let dt = 1.0 / (n - 1) as f64;
            let vals: Vec<VectorField> = (0..n).map(|j| f(j as f64 * dt)).collect();
            let ints = cumulative_integral(dt, &vals);
            let (ex, ey) = exact(1.0);
            let gx = ints[n - 1].x.values()[(0, 0)];
            let gy = ints[n - 1].y.values()[(0, 0)];
            errs.push(((gx - ex).powi(2) + (gy - ey).powi(2)).sqrt());
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 3.5, "quadrature order {order}");
    }
}
