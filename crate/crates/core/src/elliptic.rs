//! Elliptic operator toolkit: Δ⁻¹, Neumann extensions, the Helmholtz
//! projections P and Q, the operator L = −δc²∇ (= div c²∇), its
//! Neumann-series inverse, and the boundary solver G_L = G_Δ − L⁻¹LG_Δ.
//!
//! Interior inverses act on the torus / even channel sector where they are
//! exact diagonal spectral solves returning mean-zero results ("work modulo
//! constants"). No nonzero band-limited field is discretely harmonic, so
//! inhomogeneous Neumann extensions are computed semi-analytically per
//! x-mode (cosh/sinh profiles), exact pointwise; their samples are tagged
//! `MixedInY` and only pointwise/quadrature use of them is meaningful.

use crate::domain::{DomainSpec, Geometry, Parity, ScalarField, Trace1D, VectorField};
use crate::error::{Error, Result};
use crate::fft;
use ndarray::Array2;
use rustfft::num_complex::Complex64;

/// f = f1 + f2 with ∫f1 = 0 and f2 constant (H^s = H^s_0 ⊕ Con).
pub struct MeanSplit {
    pub f1: ScalarField,
    pub f2: f64,
}

impl MeanSplit {
    pub fn of(f: &ScalarField) -> Self {
        let f2 = f.mean();
        MeanSplit { f1: f.add_scalar(-f2), f2 }
    }
}

fn require_invertible_parity(f: &ScalarField, what: &str) -> Result<()> {
    match f.parity() {
        Parity::Periodic | Parity::EvenInY => Ok(()),
        p => Err(Error::NotRepresentable(format!(
            "{what} needs a torus or EvenInY field (homogeneous Neumann sector), got {p:?}"
        ))),
    }
}

/// Zero-mean inverse Laplacian with natural (homogeneous-Neumann) boundary
/// behaviour; exact on band-limited data.
pub fn laplace_invert(rhs: &ScalarField) -> Result<ScalarField> {
    require_invertible_parity(rhs, "laplace_invert")?;
    let spec = *rhs.spec();
    let mean = rhs.mean();
    let scale = rhs.l2().max(1e-300);
    if mean.abs() > 1e-10 * scale {
        return Err(Error::IncompatibleData { defect: mean.abs() * spec.area() });
    }
    let c = rhs.spectrum();
    let (rows, nx) = c.dim();
    let mut out = Array2::zeros((rows, nx));
    for j in 0..rows {
        for i in 0..nx {
            let k2 = spec.kx(i).powi(2) + spec.ky(j).powi(2);
            out[(j, i)] = if k2 == 0.0 { Complex64::new(0.0, 0.0) } else { -c[(j, i)] / k2 };
        }
    }
    Ok(ScalarField::from_spectrum(spec, rhs.parity(), out))
}

/// Harmonic Neumann extension on the channel, per x-mode in closed form.
/// `flux_constant` is the Δg = ∮data/|Ω| offset that balances a nonzero net
/// flux (the solve is modulo constants), and the gradient components are the
/// analytic derivatives sampled on the grid.
pub struct NeumannExtension {
    pub g: ScalarField,
    pub grad_x: ScalarField,
    pub grad_y: ScalarField,
    pub flux_constant: f64,
}

impl NeumannExtension {
    /// ‖g‖_{H¹} by trapezoid quadrature of the analytic samples (the sampled
    /// field is not band-limited, so Parseval does not apply).
    pub fn h1_norm(&self) -> f64 {
        let spec = *self.g.spec();
        let mut total = 0.0;
        let cell = spec.dx() * spec.dy();
        for j in 0..=spec.ny {
            let w = if j == 0 || j == spec.ny { 0.5 } else { 1.0 };
            for i in 0..spec.nx {
                let v = self.g.values()[(j, i)];
                let gx = self.grad_x.values()[(j, i)];
                let gy = self.grad_y.values()[(j, i)];
                total += w * (v * v + gx * gx + gy * gy) * cell;
            }
        }
        total.sqrt()
    }
}

/// Stable cosh(κy)/(κ sinh κ) and sinh(κy)/ sinh κ for κ > 0, y ∈ [0,1].
fn cosh_profile(kappa: f64, y: f64) -> f64 {
    let denom = kappa * (1.0 - (-2.0 * kappa).exp());
    (((y - 1.0) * kappa).exp() + (-(y + 1.0) * kappa).exp()) / denom
}

fn sinh_profile(kappa: f64, y: f64) -> f64 {
    let denom = 1.0 - (-2.0 * kappa).exp();
    (((y - 1.0) * kappa).exp() - (-(y + 1.0) * kappa).exp()) / denom
}

/// Solve Δg = flux_constant, ∂g/∂ν = data on both walls, mean(g) = 0.
pub fn neumann_extension(spec: DomainSpec, data_y0: &Trace1D, data_y1: &Trace1D) -> Result<NeumannExtension> {
    if spec.geometry != Geometry::Channel2D {
        return Err(Error::NoBoundary);
    }
    if data_y0.len() != spec.nx || data_y1.len() != spec.nx {
        return Err(Error::DomainMismatch("trace length must equal nx".into()));
    }
    let d0 = fft::forward_1d(data_y0.values.as_slice().unwrap());
    let d1 = fft::forward_1d(data_y1.values.as_slice().unwrap());
    let nx = spec.nx;
    let rows = spec.rows();
    let flux_constant = (d0[0] + d1[0]).re; // ∮data / area with ∫_Ω 1 = lx·1

    // profiles per x-bin and physical row
    let mut g = Array2::<f64>::zeros((rows, nx));
    let mut gx = Array2::<f64>::zeros((rows, nx));
    let mut gy = Array2::<f64>::zeros((rows, nx));
    for j in 0..=spec.ny {
        let y = spec.y(j);
        for p in 0..nx {
            let x = spec.x(p);
            let mut acc_g = Complex64::new(0.0, 0.0);
            let mut acc_gx = Complex64::new(0.0, 0.0);
            let mut acc_gy = Complex64::new(0.0, 0.0);
            for m in 0..nx {
                let kx = spec.kx(m);
                let phase = Complex64::from_polar(1.0, kx * x);
                let (pm, dpm): (Complex64, Complex64) = if m == 0 {
                    // κ = 0: quadratic balancing profile, zero-mean in y
                    let c0 = flux_constant;
                    let v = -d0[0] * y + 0.5 * c0 * y * y;
                    let shift = -d0[0] * (-0.5) + 0.5 * c0 / 3.0; // its y-mean
                    (v - shift, -d0[0] + c0 * y)
                } else {
                    let kappa = kx.abs();
                    let s_y = cosh_profile(kappa, y);
                    let s_1my = cosh_profile(kappa, 1.0 - y);
                    let ds_y = sinh_profile(kappa, y);
                    let ds_1my = sinh_profile(kappa, 1.0 - y);
                    (d1[m] * s_y + d0[m] * s_1my, d1[m] * ds_y - d0[m] * ds_1my)
                };
                acc_g += pm * phase;
                acc_gx += pm * Complex64::new(0.0, kx) * phase;
                acc_gy += dpm * phase;
            }
            g[(j, p)] = acc_g.re;
            gx[(j, p)] = acc_gx.re;
            gy[(j, p)] = acc_gy.re;
        }
    }
    // mirror halves: g, gx even reflections of the function; gy flips sign
    for j in spec.ny + 1..rows {
        let m = spec.mirror_row(j);
        for p in 0..nx {
            g[(j, p)] = g[(m, p)];
            gx[(j, p)] = gx[(m, p)];
            gy[(j, p)] = -gy[(m, p)];
        }
    }
    Ok(NeumannExtension {
        g: ScalarField::from_values(spec, Parity::MixedInY, g),
        grad_x: ScalarField::from_values(spec, Parity::MixedInY, gx),
        grad_y: ScalarField::from_values(spec, Parity::MixedInY, gy),
        flux_constant,
    })
}

/// General Neumann problem: Δg = rhs, ∂g/∂ν = data, mean(g) = 0.
/// Torus: `data` must be None and rhs zero-mean. Channel: requires the
/// compatibility ∫rhs = ∮data and an even (natural-sector) rhs; with wall
/// data present the result is exact pointwise but not band-limited.
pub fn laplace_solve(
    rhs: &ScalarField,
    data: Option<(&Trace1D, &Trace1D)>,
) -> Result<ScalarField> {
    let spec = *rhs.spec();
    match (spec.geometry, data) {
        (Geometry::Torus2D, None) => laplace_invert(rhs),
        (Geometry::Torus2D, Some(_)) => Err(Error::NoBoundary),
        (Geometry::Channel2D, None) => laplace_invert(rhs),
        (Geometry::Channel2D, Some((d0, d1))) => {
            require_invertible_parity(rhs, "laplace_solve rhs")?;
            let flux: f64 = (d0.values.iter().sum::<f64>() + d1.values.iter().sum::<f64>())
                * spec.dx();
            let defect = rhs.integral() - flux;
            let scale = (rhs.l2() + d0.max_abs() + d1.max_abs()).max(1.0);
            if defect.abs() > 1e-10 * scale {
                return Err(Error::IncompatibleData { defect: defect.abs() });
            }
            let interior = laplace_invert(&rhs.zero_mean())?;
            let ext = neumann_extension(spec, d0, d1)?;
            // the extension's flux constant equals rhs's mean under the
            // compatibility check, so Δ(interior + ext.g) = rhs exactly
            let sum = &interior + &ext.g.clone();
            Ok(sum.add_scalar(-sum.mean()))
        }
    }
}

/// Helmholtz–Leray decomposition w = P(w) + Q(w): Q(w) = ∇g with
/// Δg = −δw and zero Neumann data (slip-class fields), P = I − Q.
pub fn helmholtz_decompose(w: &VectorField) -> Result<(VectorField, VectorField)> {
    if !w.is_velocity_class() {
        return Err(Error::Parity(
            "Helmholtz projection needs a slip-class vector field (⟨w,ν⟩ = 0)".into(),
        ));
    }
    let g = laplace_invert(&w.div().zero_mean())?;
    let q = g.grad();
    let p = w - &q;
    Ok((p, q))
}

/// Divergence-free part.
pub fn project_solenoidal(w: &VectorField) -> Result<VectorField> {
    Ok(helmholtz_decompose(w)?.0)
}

/// Gradient part of a velocity recovered from ḟ: since ḟ = −div u and
/// div Q(u) = div u, the potential solves Δg = −ḟ; the sign is fixed by this
/// div-consistency (∇g = −∇Δ⁻¹ḟ, not +∇Δ⁻¹ḟ).
pub fn gradient_part_from_fdot(fdot: &ScalarField) -> Result<VectorField> {
    let g = laplace_invert(&fdot.zero_mean())?.scale(-1.0);
    Ok(g.grad())
}

/// Convergence record of the Neumann-series inverse.
#[derive(Clone, Copy, Debug)]
pub struct InvertStats {
    pub iterations: usize,
    /// geometric-mean per-iteration residual ratio
    pub contraction: f64,
    /// worst observed per-iteration ratio (the measured series ratio ρ*)
    pub rho_star: f64,
    pub final_residual: f64,
}

/// The wave operator's elliptic part: L f = −δ(c²∇f) = div(c²∇f).
pub struct LOperator {
    pub c2: ScalarField,
    pub k: f64,
    /// ‖c²/k − 1‖₄, the smallness hypothesis of the series inversion.
    pub deviation: f64,
}

pub const L_SOLVE_TOL: f64 = 1e-9;
pub const L_SOLVE_MAX_ITER: usize = 200;

impl LOperator {
    pub fn new(c2: ScalarField, k: f64) -> Result<Self> {
        if !(k > 0.0) {
            return Err(Error::Config(format!("stiffness k must be positive, got {k}")));
        }
        let min = c2.values().iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min > 0.0) {
            return Err(Error::Unphysical(format!("c² must be positive, min = {min}")));
        }
        let deviation = c2.scale(1.0 / k).add_scalar(-1.0).hs(4.0);
        Ok(LOperator { c2, k, deviation })
    }

    /// Constant-coefficient operator L = kΔ.
    pub fn constant(spec: DomainSpec, k: f64) -> Self {
        let c2 = ScalarField::constant(spec, k);
        LOperator { c2, k, deviation: 0.0 }
    }

    pub fn apply(&self, f: &ScalarField) -> ScalarField {
        let gx = self.c2.mul(&f.dx());
        let gy = self.c2.mul(&f.dy());
        &gx.dx() + &gy.dy()
    }

    /// Solve L f = rhs with ∂f/∂ν = 0 and mean(f) = 0 by the Neumann series
    /// x ← x + (1/k)Δ⁻¹(rhs − Lx), contracting at rate ≈ ‖c²/k − 1‖.
    /// The rhs is projected onto the dealiased band first: L's range excludes
    /// the trimmed modes, so residuals there can never contract.
    pub fn invert(&self, rhs: &ScalarField) -> Result<(ScalarField, InvertStats)> {
        require_invertible_parity(rhs, "L⁻¹")?;
        let rhs = rhs.dealiased().zero_mean();
        let rhs_norm = rhs.l2();
        let mut x = ScalarField::zeros(*rhs.spec(), rhs.parity());
        if rhs_norm == 0.0 {
            return Ok((
                x,
                InvertStats { iterations: 0, contraction: 0.0, rho_star: 0.0, final_residual: 0.0 },
            ));
        }
        let mut residual = rhs.clone();
        let mut res_norm = rhs_norm;
        let mut ratios: Vec<f64> = Vec::new();
        let mut grew = 0usize;
        for iter in 1..=L_SOLVE_MAX_ITER {
            let update = laplace_invert(&residual.zero_mean())?.scale(1.0 / self.k);
            x = &x + &update;
            residual = &rhs - &self.apply(&x);
            let new_norm = residual.l2();
            let ratio = new_norm / res_norm.max(1e-300);
            ratios.push(ratio);
            if ratio >= 1.0 {
                grew += 1;
                if grew >= 2 {
                    return Err(Error::SeriesDiverged { ratio });
                }
            }
            res_norm = new_norm;
            if res_norm <= L_SOLVE_TOL * rhs_norm {
                let contraction = ratios.iter().product::<f64>().powf(1.0 / ratios.len() as f64);
                let rho_star = ratios.iter().cloned().fold(0.0f64, f64::max);
                return Ok((
                    x.zero_mean(),
                    InvertStats {
                        iterations: iter,
                        contraction,
                        rho_star,
                        final_residual: res_norm / rhs_norm,
                    },
                ));
            }
        }
        Err(Error::SeriesDiverged { ratio: ratios.last().copied().unwrap_or(f64::NAN) })
    }

    /// G_L = G_Δ − L⁻¹ L G_Δ: solves Lg = 0 (modulo the flux constant),
    /// ∂g/∂ν = data. L G_Δh is assembled analytically (c²Δg₀ + ∇c²·∇g₀ with
    /// closed-form ∇g₀); the odd-sector part of that source, which the even
    /// interior inverse cannot absorb, is dropped and its norm reported.
    pub fn gl_solve(&self, data_y0: &Trace1D, data_y1: &Trace1D) -> Result<GlSolution> {
        let spec = *self.c2.spec();
        let ext = neumann_extension(spec, data_y0, data_y1)?;
        // L g₀ pointwise: c²·Δg₀ + ⟨∇c², ∇g₀⟩ with Δg₀ = flux constant
        let c2grad = self.c2.grad();
        let lg0 = &self.c2.scale(ext.flux_constant)
            + &(&c2grad.x.mul_raw(&ext.grad_x) + &c2grad.y.mul_raw(&ext.grad_y));
        let (even_src, odd_src) = lg0.parity_parts();
        let dropped_odd = odd_src.l2();
        let (corr, stats) = self.invert(&even_src.zero_mean())?;
        let g = &ext.g - &corr;
        Ok(GlSolution { g: g.add_scalar(-g.mean()), extension: ext, dropped_odd, stats })
    }
}

pub struct GlSolution {
    pub g: ScalarField,
    pub extension: NeumannExtension,
    pub dropped_odd: f64,
    pub stats: InvertStats,
}

impl GlSolution {
    /// Quadrature H¹ norm of the boundary solution (samples are not
    /// band-limited when wall data is inhomogeneous).
    pub fn h1_norm(&self) -> f64 {
        // g = extension + band-limited correction; reuse the extension's
        // quadrature with corrected values
        let spec = *self.g.spec();
        let corr = &self.extension.g - &self.g; // the L⁻¹ correction, band-limited
        let cx = corr.dx();
        let cy = corr.dy();
        let cell = spec.dx() * spec.dy();
        let mut total = 0.0;
        for j in 0..=spec.ny {
            let w = if j == 0 || j == spec.ny { 0.5 } else { 1.0 };
            for i in 0..spec.nx {
                let v = self.g.values()[(j, i)];
                let gx = self.extension.grad_x.values()[(j, i)] - cx.values()[(j, i)];
                let gy = self.extension.grad_y.values()[(j, i)] - cy.values()[(j, i)];
                total += w * (v * v + gx * gx + gy * gy) * cell;
            }
        }
        total.sqrt()
    }
}

/// Measured operator norm of L⁻¹ on random zero-mean inputs (for the 1/k
/// scaling check).
pub fn measure_inverse_norm(
    op: &LOperator,
    max_mode: usize,
    trials: usize,
    rng: &mut crate::rng::Rng,
) -> Result<f64> {
    let spec = *op.c2.spec();
    let parity = if spec.is_channel() { Parity::EvenInY } else { Parity::Periodic };
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let rhs = crate::domain::random_scalar(spec, parity, max_mode, rng).zero_mean();
        let (x, _) = op.invert(&rhs)?;
        worst = worst.max(x.l2() / rhs.l2().max(1e-300));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{random_scalar, random_velocity, TWO_PI};
    use crate::rng::Rng;

    #[test]
    fn mean_split_invariants() {
        let mut rng = Rng::new(2);
        let f = random_scalar(DomainSpec::torus(32, 32, 1.0), Parity::Periodic, 4, &mut rng)
            .add_scalar(0.7);
        let split = MeanSplit::of(&f);
        assert!(split.f1.mean().abs() < 1e-12);
        let recombined = split.f1.add_scalar(split.f2);
        assert!((&recombined - &f).max_abs() < 1e-12);
    }

    #[test]
    fn laplace_eigenfunction() {
        let spec = DomainSpec::torus(64, 64, 1.0);
        let g_exact = ScalarField::from_fn(spec, Parity::Periodic, |x, _| (TWO_PI * x).sin());
        let rhs = ScalarField::from_fn(spec, Parity::Periodic, |x, _| {
            -(TWO_PI * TWO_PI) * (TWO_PI * x).sin()
        });
        let g = laplace_solve(&rhs, None).unwrap();
        assert!((&g - &g_exact).max_abs() < 1e-11);
    }

    #[test]
    fn laplace_zero_gives_zero() {
        let spec = DomainSpec::channel(16, 16, 1.0);
        let zero = ScalarField::zeros(spec, Parity::EvenInY);
        let d = Trace1D::from_values(spec.lx, ndarray::Array1::zeros(spec.nx));
        let g = laplace_solve(&zero, Some((&d, &d))).unwrap();
        assert!(g.max_abs() < 1e-14);
    }

    /// Harmonic extension against the separated-variables closed form
    /// cosh(2πy)·sin(2πx)/(2π·sinh(2π)).
    #[test]
    fn neumann_extension_matches_separated_variables() {
        let spec = DomainSpec::channel(32, 32, 1.0);
        let zero = Trace1D::from_values(spec.lx, ndarray::Array1::zeros(spec.nx));
        let data1 = Trace1D::from_values(
            spec.lx,
            ndarray::Array1::from_shape_fn(spec.nx, |i| (TWO_PI * spec.x(i)).sin()),
        );
        let g = laplace_solve(&ScalarField::zeros(spec, Parity::EvenInY), Some((&zero, &data1)))
            .unwrap();
        let k = TWO_PI;
        // zero-mean offset of the closed form is zero (sin has no x-mean)
        for j in 0..=spec.ny {
            for i in 0..spec.nx {
                let (x, y) = (spec.x(i), spec.y(j));
                let expect = (k * y).cosh() * (k * x).sin() / (k * (k).sinh());
                let got = g.values()[(j, i)];
                assert!((got - expect).abs() < 1e-10, "({x},{y}): {got} vs {expect}");
            }
        }
    }

    #[test]
    fn incompatible_neumann_data_is_rejected_with_defect() {
        let spec = DomainSpec::channel(16, 16, 1.0);
        let rhs = ScalarField::zeros(spec, Parity::EvenInY);
        let ones = Trace1D::from_values(spec.lx, ndarray::Array1::ones(spec.nx));
        let zero = Trace1D::from_values(spec.lx, ndarray::Array1::zeros(spec.nx));
        match laplace_solve(&rhs, Some((&ones, &zero))) {
            Err(Error::IncompatibleData { defect }) => assert!((defect - 1.0).abs() < 1e-12),
            other => panic!("expected incompatible-data rejection, got {other:?}"),
        }
    }

    #[test]
    fn projection_algebra_on_gradient_and_solenoidal_fields() {
        let mut rng = Rng::new(5);
        for spec in [DomainSpec::torus(32, 32, 1.0), DomainSpec::channel(32, 16, 1.0)] {
            // Q(∇g) = ∇g, P(∇g) = 0
            let parity = if spec.is_channel() { Parity::EvenInY } else { Parity::Periodic };
            let g = random_scalar(spec, parity, 4, &mut rng);
            let gradg = g.grad();
            let (p, q) = helmholtz_decompose(&gradg).unwrap();
            assert!(p.l2() <= 1e-10 * gradg.l2());
            assert!((&q - &gradg).l2() <= 1e-10 * gradg.l2());
            // divergence-free w: P w = w
            let w = crate::domain::random_solenoidal(spec, 4, &mut rng);
            let (pw, qw) = helmholtz_decompose(&w).unwrap();
            assert!(qw.l2() <= 1e-10 * w.l2());
            assert!((&pw - &w).l2() <= 1e-10 * w.l2());
        }
    }

    #[test]
    fn projection_orthogonality_and_idempotence() {
        let mut rng = Rng::new(7);
        let spec = DomainSpec::torus(32, 32, 1.0);
        for _ in 0..20 {
            let w = random_velocity(spec, 5, &mut rng);
            let (p, q) = helmholtz_decompose(&w).unwrap();
            // reconstruction and orthogonality by direct quadrature
            assert!((&(&p + &q) - &w).l2() < 1e-11 * w.l2());
            assert!(p.inner(&q).abs() <= 1e-10 * (p.l2() * q.l2()).max(1e-30));
            // idempotence / annihilation
            let (pp, pq) = helmholtz_decompose(&p).unwrap();
            assert!((&pp - &p).l2() <= 1e-10 * w.l2());
            assert!(pq.l2() <= 1e-10 * w.l2());
            let (qp, qq) = helmholtz_decompose(&q).unwrap();
            assert!(qp.l2() <= 1e-10 * w.l2());
            assert!((&qq - &q).l2() <= 1e-10 * w.l2());
        }
    }

    #[test]
    fn constant_coefficient_l_reduces_to_scaled_laplace() {
        let spec = DomainSpec::torus(32, 32, 1.0);
        let k = 100.0;
        let op = LOperator::constant(spec, k);
        let mut rng = Rng::new(11);
        let rhs = random_scalar(spec, Parity::Periodic, 4, &mut rng).zero_mean();
        let (f, stats) = op.invert(&rhs).unwrap();
        let direct = laplace_invert(&rhs).unwrap().scale(1.0 / k);
        assert!((&f - &direct).l2() < 1e-10 * direct.l2());
        assert!(stats.iterations <= 2);
        // zero rhs → zero
        let zero = ScalarField::zeros(spec, Parity::Periodic);
        let (f0, _) = op.invert(&zero).unwrap();
        assert!(f0.max_abs() == 0.0);
    }

    #[test]
    fn variable_coefficient_inverse_meets_residual_and_contracts() {
        let spec = DomainSpec::torus(32, 32, 1.0);
        let k = 1.0e3;
        let c2 = ScalarField::from_fn(spec, Parity::Periodic, |x, _| 1.0 + 0.1 * (TWO_PI * x).sin())
            .scale(k);
        let op = LOperator::new(c2, k).unwrap();
        let mut rng = Rng::new(13);
        let rhs = random_scalar(spec, Parity::Periodic, 5, &mut rng).zero_mean();
        let (f, stats) = op.invert(&rhs).unwrap();
        let residual = (&rhs - &op.apply(&f)).l2();
        assert!(residual <= 1e-8 * rhs.l2(), "residual {residual:.3e}");
        assert!(f.mean().abs() < 1e-12);
        // per-iteration contraction ~ ‖c²/k − 1‖-sized (0.1 here)
        assert!(stats.contraction < 0.3, "contraction {}", stats.contraction);
        assert!(stats.rho_star < 1.0);
    }

    /// ∫ g·Lf = −∫ c²⟨∇f, ∇g⟩ for even channel fields (zero wall flux).
    #[test]
    fn l_is_self_adjoint_with_c2_weight() {
        let spec = DomainSpec::channel(32, 16, 1.0);
        let k = 50.0;
        let c2 = ScalarField::from_fn(spec, Parity::EvenInY, |x, y| {
            k * (1.0 + 0.2 * (TWO_PI * x).cos() * (std::f64::consts::PI * y).cos())
        });
        let op = LOperator::new(c2.clone(), k).unwrap();
        let mut rng = Rng::new(17);
        for _ in 0..5 {
            let f = random_scalar(spec, Parity::EvenInY, 3, &mut rng);
            let g = random_scalar(spec, Parity::EvenInY, 3, &mut rng);
            let lhs = g.mul_raw(&op.apply(&f)).integral();
            let rhs = -c2.mul_raw(&f.grad().dot(&g.grad())).integral();
            let scale = (f.hs(2.0) * g.hs(2.0) * k).max(1.0);
            assert!((lhs - rhs).abs() <= 1e-10 * scale, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn inverse_norm_scales_like_one_over_k() {
        let spec = DomainSpec::torus(16, 16, 1.0);
        let mut norms = Vec::new();
        for k in [1.0e2f64, 1.0e3, 1.0e4] {
            let c2 = ScalarField::from_fn(spec, Parity::Periodic, |x, y| {
                k * (1.0 + (TWO_PI * x).sin() * (TWO_PI * y).cos() / k.sqrt())
            });
            let op = LOperator::new(c2, k).unwrap();
            let mut rng = Rng::new(23);
            norms.push(measure_inverse_norm(&op, 4, 5, &mut rng).unwrap());
        }
        let slope01 = (norms[1] / norms[0]).ln() / (10.0f64).ln();
        let slope12 = (norms[2] / norms[1]).ln() / (10.0f64).ln();
        assert!((slope01 + 1.0).abs() < 0.1, "slope {slope01}");
        assert!((slope12 + 1.0).abs() < 0.1, "slope {slope12}");
    }

    #[test]
    fn gl_solves_boundary_problem_for_constant_c2() {
        let spec = DomainSpec::channel(32, 32, 1.0);
        let k = 400.0;
        let op = LOperator::constant(spec, k);
        let zero = Trace1D::from_values(spec.lx, ndarray::Array1::zeros(spec.nx));
        let data = Trace1D::from_values(
            spec.lx,
            ndarray::Array1::from_shape_fn(spec.nx, |i| (TWO_PI * spec.x(i)).cos()),
        );
        let sol = op.gl_solve(&zero, &data).unwrap();
        // constant c²: G_L = G_Δ exactly — compare against the closed form
        let kk = TWO_PI;
        for i in 0..spec.nx {
            let x = spec.x(i);
            let expect = (kk * 1.0f64).cosh() * (kk * x).cos() / (kk * (kk).sinh());
            assert!(
                (sol.g.values()[(spec.ny, i)] - expect).abs() < 1e-10,
                "wall value mismatch at x = {x}"
            );
        }
        assert!(sol.dropped_odd < 1e-12);
    }

    #[test]
    fn gradient_part_sign_is_div_consistent() {
        let spec = DomainSpec::torus(32, 32, 1.0);
        let mut rng = Rng::new(31);
        let u = random_velocity(spec, 4, &mut rng);
        let fdot = u.delta(); // ḟ = −div u
        let gradg = gradient_part_from_fdot(&fdot).unwrap();
        // div ∇g must equal div u (defining property of Q)
        let lhs = gradg.div();
        let rhs = u.div();
        assert!((&lhs - &rhs).l2() < 1e-10 * rhs.l2().max(1e-30));
        // and it must coincide with the Helmholtz gradient part
        let (_, q) = helmholtz_decompose(&u).unwrap();
        assert!((&gradg - &q).l2() < 1e-10 * q.l2().max(1e-30));
    }
}
