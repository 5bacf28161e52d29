//! Discrete geometry, spectral fields, exact calculus, and Sobolev norms.
//!
//! Two geometries are supported: a square torus and a flat-wall channel
//! (x periodic, y ∈ [0,1], walls at y = 0 and y = 1). Channel fields live on
//! a mirror-doubled grid of y-period 2 with the walls on grid nodes, so every
//! derivative, inverse Laplacian, and norm is plain torus spectral calculus
//! and the wall parities are enforced symmetries rather than approximate
//! boundary conditions. EvenInY fields have ∂f/∂y = 0 on the walls exactly;
//! OddInY fields vanish there exactly.

use crate::error::{Error, Result};
use crate::fft;
use ndarray::{Array1, Array2};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::sync::{Arc, OnceLock};

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Geometry {
    Torus2D,
    Channel2D,
}

/// Grid geometry. `lx` is the x-period; the torus is square (y-period = lx),
/// the channel has height 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub geometry: Geometry,
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
}

impl DomainSpec {
    pub fn new(geometry: Geometry, nx: usize, ny: usize, lx: f64) -> Result<Self> {
        if nx < 4 || ny < 4 || !nx.is_power_of_two() || !ny.is_power_of_two() {
            return Err(Error::Config(format!(
                "grid sizes must be powers of two ≥ 4, got {nx}×{ny}"
            )));
        }
        if !(lx > 0.0) {
            return Err(Error::Config(format!("lx must be positive, got {lx}")));
        }
        Ok(DomainSpec { geometry, nx, ny, lx })
    }

    pub fn torus(nx: usize, ny: usize, lx: f64) -> Self {
        Self::new(Geometry::Torus2D, nx, ny, lx).expect("valid torus spec")
    }

    pub fn channel(nx: usize, ny: usize, lx: f64) -> Self {
        Self::new(Geometry::Channel2D, nx, ny, lx).expect("valid channel spec")
    }

    pub fn is_channel(&self) -> bool {
        self.geometry == Geometry::Channel2D
    }

    /// Physical y-extent (lx on the torus, 1 on the channel).
    pub fn ly(&self) -> f64 {
        match self.geometry {
            Geometry::Torus2D => self.lx,
            Geometry::Channel2D => 1.0,
        }
    }

    /// y-period of the computational grid (2 on the channel: mirror doubling).
    pub fn ly_comp(&self) -> f64 {
        match self.geometry {
            Geometry::Torus2D => self.lx,
            Geometry::Channel2D => 2.0,
        }
    }

    /// Rows of the computational grid (2·ny on the channel).
    pub fn rows(&self) -> usize {
        match self.geometry {
            Geometry::Torus2D => self.ny,
            Geometry::Channel2D => 2 * self.ny,
        }
    }

    pub fn area(&self) -> f64 {
        self.lx * self.ly()
    }

    pub fn dx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        self.ly() / self.ny as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    /// y-coordinate of computational row j (walls at j = 0 and j = ny).
    pub fn y(&self, j: usize) -> f64 {
        j as f64 * self.ly_comp() / self.rows() as f64
    }

    pub fn kx(&self, i: usize) -> f64 {
        TWO_PI * fft::signed_mode(i, self.nx) as f64 / self.lx
    }

    pub fn ky(&self, j: usize) -> f64 {
        TWO_PI * fft::signed_mode(j, self.rows()) as f64 / self.ly_comp()
    }

    /// Mirror row index for y → −y on the doubled channel grid.
    pub fn mirror_row(&self, j: usize) -> usize {
        let rows = self.rows();
        (rows - j) % rows
    }
}

/// Symmetry class of a field's y-expansion. `MixedInY` (both parities at
/// once) exists so boundary-incompatible initial data can be represented;
/// solver states always carry a definite parity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parity {
    Periodic,
    EvenInY,
    OddInY,
    MixedInY,
}

impl Parity {
    pub fn product(self, other: Parity) -> Parity {
        use Parity::*;
        match (self, other) {
            (Periodic, Periodic) => Periodic,
            (EvenInY, EvenInY) | (OddInY, OddInY) => EvenInY,
            (EvenInY, OddInY) | (OddInY, EvenInY) => OddInY,
            (MixedInY, p) | (p, MixedInY) if p != Periodic => MixedInY,
            _ => panic!("parity product undefined for {self:?} × {other:?}"),
        }
    }

    /// Parity after one y-derivative.
    pub fn flip(self) -> Parity {
        match self {
            Parity::EvenInY => Parity::OddInY,
            Parity::OddInY => Parity::EvenInY,
            p => p,
        }
    }

    fn combine(self, other: Parity) -> Option<Parity> {
        use Parity::*;
        match (self, other) {
            (a, b) if a == b => Some(a),
            (MixedInY, p) | (p, MixedInY) if p != Periodic => Some(MixedInY),
            _ => None,
        }
    }

    fn sign(self) -> f64 {
        match self {
            Parity::OddInY => -1.0,
            _ => 1.0,
        }
    }
}

/// Which norm multiplier realizes H^s.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormConvention {
    /// w(κ) = Σ_{ℓ=0..s} |κ|^{2ℓ} — the literal Σ‖∇^ℓ·‖² norm (integer s).
    IntegerSum,
    /// w(κ) = (1+|κ|²)^s — spectral interpolation, any real s ≥ 0.
    Interpolated,
}

/// Non-negative Sobolev index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SobolevIndex(pub f64);

impl SobolevIndex {
    pub fn new(s: f64) -> Result<Self> {
        if s < 0.0 {
            return Err(Error::Config(format!("Sobolev index must be ≥ 0, got {s}")));
        }
        Ok(SobolevIndex(s))
    }

    pub fn is_integer(&self) -> bool {
        (self.0 - self.0.round()).abs() < 1e-12
    }

    /// Default convention: the literal derivative sum at integer s, the
    /// interpolated multiplier otherwise.
    pub fn default_convention(&self) -> NormConvention {
        if self.is_integer() {
            NormConvention::IntegerSum
        } else {
            NormConvention::Interpolated
        }
    }
}

/// A norm value together with the multiplier convention that produced it.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct NormResult {
    pub value: f64,
    pub convention: NormConvention,
}

fn norm_weight(k2: f64, s: SobolevIndex, convention: NormConvention) -> f64 {
    match convention {
        NormConvention::IntegerSum => {
            let n = s.0.round() as usize;
            let mut w = 1.0;
            let mut pow = 1.0;
            for _ in 0..n {
                pow *= k2;
                w += pow;
            }
            w
        }
        NormConvention::Interpolated => (1.0 + k2).powf(s.0),
    }
}

/// Scalar samples on the grid plus (lazily computed) Fourier coefficients.
/// Immutable after construction; all operations return new fields.
#[derive(Debug)]
pub struct ScalarField {
    spec: DomainSpec,
    parity: Parity,
    values: Array2<f64>,
    spectrum: OnceLock<Arc<Array2<Complex64>>>,
}

impl Clone for ScalarField {
    fn clone(&self) -> Self {
        let s = ScalarField {
            spec: self.spec,
            parity: self.parity,
            values: self.values.clone(),
            spectrum: OnceLock::new(),
        };
        if let Some(c) = self.spectrum.get() {
            let _ = s.spectrum.set(c.clone());
        }
        s
    }
}

impl ScalarField {
    fn check_parity_domain(spec: &DomainSpec, parity: Parity) {
        let ok = match spec.geometry {
            Geometry::Torus2D => parity == Parity::Periodic,
            Geometry::Channel2D => parity != Parity::Periodic,
        };
        assert!(ok, "parity {parity:?} invalid on {:?}", spec.geometry);
    }

    pub fn zeros(spec: DomainSpec, parity: Parity) -> Self {
        Self::check_parity_domain(&spec, parity);
        ScalarField {
            spec,
            parity,
            values: Array2::zeros((spec.rows(), spec.nx)),
            spectrum: OnceLock::new(),
        }
    }

    pub fn constant(spec: DomainSpec, v: f64) -> Self {
        let parity = if spec.is_channel() { Parity::EvenInY } else { Parity::Periodic };
        let mut f = Self::zeros(spec, parity);
        f.values.fill(v);
        f
    }

    /// Sample `f(x, y)` on the physical grid. On the channel the mirror half
    /// is filled by the declared symmetry; `MixedInY` must be built with
    /// [`ScalarField::mix`] instead (its even/odd split is not derivable from
    /// physical samples alone).
    pub fn from_fn(spec: DomainSpec, parity: Parity, f: impl Fn(f64, f64) -> f64) -> Self {
        Self::check_parity_domain(&spec, parity);
        assert!(parity != Parity::MixedInY, "build MixedInY fields with ScalarField::mix");
        let mut field = Self::zeros(spec, parity);
        match spec.geometry {
            Geometry::Torus2D => {
                for j in 0..spec.ny {
                    for i in 0..spec.nx {
                        field.values[(j, i)] = f(spec.x(i), spec.y(j));
                    }
                }
            }
            Geometry::Channel2D => {
                let sign = parity.sign();
                for j in 0..=spec.ny {
                    for i in 0..spec.nx {
                        field.values[(j, i)] = f(spec.x(i), spec.y(j));
                    }
                }
                for j in spec.ny + 1..spec.rows() {
                    let m = spec.mirror_row(j);
                    for i in 0..spec.nx {
                        field.values[(j, i)] = sign * field.values[(m, i)];
                    }
                }
                if parity == Parity::OddInY {
                    field.values.row_mut(0).fill(0.0);
                    field.values.row_mut(spec.ny).fill(0.0);
                }
            }
        }
        field
    }

    /// Combine an even and an odd channel field into a mixed one.
    pub fn mix(even: &ScalarField, odd: &ScalarField) -> Self {
        assert_eq!(even.spec, odd.spec, "domain mismatch in mix");
        assert_eq!(even.parity, Parity::EvenInY);
        assert_eq!(odd.parity, Parity::OddInY);
        ScalarField {
            spec: even.spec,
            parity: Parity::MixedInY,
            values: &even.values + &odd.values,
            spectrum: OnceLock::new(),
        }
    }

    /// Even/odd split of a channel field (identity components for pure fields).
    pub fn parity_parts(&self) -> (ScalarField, ScalarField) {
        assert!(self.spec.is_channel());
        let mut e = ScalarField::zeros(self.spec, Parity::EvenInY);
        let mut o = ScalarField::zeros(self.spec, Parity::OddInY);
        for j in 0..self.spec.rows() {
            let m = self.spec.mirror_row(j);
            for i in 0..self.spec.nx {
                e.values[(j, i)] = 0.5 * (self.values[(j, i)] + self.values[(m, i)]);
                o.values[(j, i)] = 0.5 * (self.values[(j, i)] - self.values[(m, i)]);
            }
        }
        (e, o)
    }

    pub fn from_values(spec: DomainSpec, parity: Parity, values: Array2<f64>) -> Self {
        Self::check_parity_domain(&spec, parity);
        assert_eq!(values.dim(), (spec.rows(), spec.nx));
        let mut f = ScalarField { spec, parity, values, spectrum: OnceLock::new() };
        f.symmetrize();
        f
    }

    pub fn from_spectrum(spec: DomainSpec, parity: Parity, coeffs: Array2<Complex64>) -> Self {
        Self::check_parity_domain(&spec, parity);
        assert_eq!(coeffs.dim(), (spec.rows(), spec.nx));
        let values = fft::inverse(&coeffs);
        let mut f = ScalarField { spec, parity, values, spectrum: OnceLock::new() };
        f.symmetrize();
        f
    }

    /// Pin the declared symmetry bit-exactly (kills FFT round-off drift).
    fn symmetrize(&mut self) {
        if !self.spec.is_channel() || self.parity == Parity::MixedInY {
            return;
        }
        let sign = self.parity.sign();
        let rows = self.spec.rows();
        for j in 1..self.spec.ny {
            let m = rows - j;
            for i in 0..self.spec.nx {
                let a = self.values[(j, i)];
                let b = self.values[(m, i)];
                let v = 0.5 * (a + sign * b);
                self.values[(j, i)] = v;
                self.values[(m, i)] = sign * v;
            }
        }
        if self.parity == Parity::OddInY {
            self.values.row_mut(0).fill(0.0);
            self.values.row_mut(self.spec.ny).fill(0.0);
        }
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    /// Full computational array (doubled rows on the channel).
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    /// Number of physically distinct rows (ny on torus, ny+1 on channel).
    pub fn physical_rows(&self) -> usize {
        match self.spec.geometry {
            Geometry::Torus2D => self.spec.ny,
            Geometry::Channel2D => self.spec.ny + 1,
        }
    }

    pub fn spectrum(&self) -> &Array2<Complex64> {
        self.spectrum.get_or_init(|| Arc::new(fft::forward(&self.values)))
    }

    /// Round-trip check: grid → coefficients → grid relative error.
    pub fn roundtrip_error(&self) -> f64 {
        let back = fft::inverse(self.spectrum());
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for (a, b) in self.values.iter().zip(back.iter()) {
            num += (a - b) * (a - b);
            den += a * a;
        }
        (num / den.max(1e-300)).sqrt()
    }

    fn unary_spectral(&self, parity: Parity, f: impl Fn(usize, usize, Complex64) -> Complex64) -> ScalarField {
        let c = self.spectrum();
        let (rows, nx) = c.dim();
        let mut out = Array2::zeros((rows, nx));
        for j in 0..rows {
            for i in 0..nx {
                out[(j, i)] = f(j, i, c[(j, i)]);
            }
        }
        ScalarField::from_spectrum(self.spec, parity, out)
    }

    pub fn dx(&self) -> ScalarField {
        let spec = self.spec;
        let nx = spec.nx;
        self.unary_spectral(self.parity, |_, i, c| {
            // Nyquist derivative is ill-defined for real fields; drop it.
            if i == nx / 2 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, spec.kx(i)) * c
            }
        })
    }

    pub fn dy(&self) -> ScalarField {
        let spec = self.spec;
        let rows = spec.rows();
        self.unary_spectral(self.parity.flip(), |j, _, c| {
            if j == rows / 2 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, spec.ky(j)) * c
            }
        })
    }

    pub fn laplacian(&self) -> ScalarField {
        let spec = self.spec;
        self.unary_spectral(self.parity, |j, i, c| {
            let k2 = spec.kx(i).powi(2) + spec.ky(j).powi(2);
            -k2 * c
        })
    }

    pub fn grad(&self) -> VectorField {
        VectorField::new(self.dx(), self.dy())
    }

    /// Zero all modes with |m| above the 2/3 cutoff in either direction.
    pub fn dealiased(&self) -> ScalarField {
        let spec = self.spec;
        let (mx_cut, my_cut) = (spec.nx as i64 / 3, spec.rows() as i64 / 3);
        self.unary_spectral(self.parity, |j, i, c| {
            let mx = fft::signed_mode(i, spec.nx).abs();
            let my = fft::signed_mode(j, spec.rows()).abs();
            if mx > mx_cut || my > my_cut {
                Complex64::new(0.0, 0.0)
            } else {
                c
            }
        })
    }

    /// Dealiased pointwise product (the default for quadratic nonlinearities).
    pub fn mul(&self, other: &ScalarField) -> ScalarField {
        self.mul_raw(other).dealiased()
    }

    /// Pointwise product without dealiasing (quadrature / diagnostics paths).
    pub fn mul_raw(&self, other: &ScalarField) -> ScalarField {
        assert_eq!(self.spec, other.spec, "domain mismatch in product");
        let parity = self.parity.product(other.parity);
        ScalarField {
            spec: self.spec,
            parity,
            values: &self.values * &other.values,
            spectrum: OnceLock::new(),
        }
    }

    pub fn scale(&self, a: f64) -> ScalarField {
        ScalarField {
            spec: self.spec,
            parity: self.parity,
            values: self.values.mapv(|v| a * v),
            spectrum: OnceLock::new(),
        }
    }

    /// Pointwise map. Even symmetry survives any map; odd symmetry only odd
    /// maps, so the result of mapping an odd field is mixed.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        let parity = match self.parity {
            Parity::OddInY => Parity::MixedInY,
            p => p,
        };
        ScalarField {
            spec: self.spec,
            parity,
            values: self.values.mapv(&f),
            spectrum: OnceLock::new(),
        }
    }

    pub fn add_scalar(&self, a: f64) -> ScalarField {
        assert!(
            self.parity != Parity::OddInY,
            "adding a constant to an odd field breaks its symmetry"
        );
        ScalarField {
            spec: self.spec,
            parity: self.parity,
            values: self.values.mapv(|v| v + a),
            spectrum: OnceLock::new(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// ∫ f over the physical domain, exact for band-limited fields
    /// (coefficient formula; on the channel odd y-modes contribute
    /// ((−1)^m − 1)/(iπm) over [0,1]).
    pub fn integral(&self) -> f64 {
        let c = self.spectrum();
        match self.spec.geometry {
            Geometry::Torus2D => self.spec.area() * c[(0, 0)].re,
            Geometry::Channel2D => {
                let rows = self.spec.rows();
                let mut sum = Complex64::new(0.0, 0.0);
                for j in 0..rows {
                    let m = fft::signed_mode(j, rows);
                    let w = if m == 0 {
                        Complex64::new(1.0, 0.0)
                    } else {
                        let pm = std::f64::consts::PI * m as f64;
                        // ∫₀¹ e^{iπmy} dy
                        (Complex64::new(0.0, pm).exp() - 1.0) / Complex64::new(0.0, pm)
                    };
                    sum += c[(j, 0)] * w;
                }
                self.spec.lx * sum.re
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.integral() / self.spec.area()
    }

    /// Subtract the mean (projection onto the zero-integral component).
    pub fn zero_mean(&self) -> ScalarField {
        self.add_scalar(-self.mean())
    }

    fn parseval_weighted(&self, s: SobolevIndex, convention: NormConvention) -> f64 {
        let c = self.spectrum();
        let spec = self.spec;
        // Doubled-grid Parseval counts each physical point twice on the
        // channel; ∫_channel = ½ ∫_doubled for even/odd content.
        let area = match spec.geometry {
            Geometry::Torus2D => spec.area(),
            Geometry::Channel2D => spec.lx,
        };
        let mut sum = 0.0;
        for j in 0..spec.rows() {
            for i in 0..spec.nx {
                let k2 = spec.kx(i).powi(2) + spec.ky(j).powi(2);
                sum += norm_weight(k2, s, convention) * c[(j, i)].norm_sqr();
            }
        }
        (area * sum).sqrt()
    }

    /// Interior Sobolev norm. For pure-parity fields this is exact Parseval;
    /// mixed channel fields at integer s go through the quadrature path
    /// (their even/odd cross terms do not cancel over the half-domain).
    pub fn sobolev_norm(&self, s: SobolevIndex, convention: Option<NormConvention>) -> NormResult {
        let convention = convention.unwrap_or_else(|| s.default_convention());
        if self.parity == Parity::MixedInY && convention == NormConvention::IntegerSum {
            let n = s.0.round() as usize;
            let mut total = 0.0;
            let mut layer: Vec<ScalarField> = vec![self.clone()];
            for _ in 0..=n {
                for g in &layer {
                    total += g.mul_raw(g).integral();
                }
                layer = layer.iter().flat_map(|g| [g.dx(), g.dy()]).collect();
            }
            return NormResult { value: total.sqrt(), convention };
        }
        NormResult { value: self.parseval_weighted(s, convention), convention }
    }

    /// Shorthand: norm value with the default convention for `s`.
    pub fn hs(&self, s: f64) -> f64 {
        self.sobolev_norm(SobolevIndex(s), None).value
    }

    pub fn l2(&self) -> f64 {
        self.hs(0.0)
    }

    /// Exact trigonometric evaluation at arbitrary points (data-parallel).
    /// Only nonzero coefficients participate, so dealiased fields evaluate
    /// at less than half the dense cost.
    pub fn eval_at(&self, points: &[(f64, f64)]) -> Vec<f64> {
        let c = self.spectrum();
        let spec = self.spec;
        let nz: Vec<(usize, usize, Complex64)> = c
            .indexed_iter()
            .filter(|(_, v)| v.re != 0.0 || v.im != 0.0)
            .map(|((j, i), v)| (j, i, *v))
            .collect();
        points
            .par_iter()
            .map(|&(x, y)| eval_sparse_at(&nz, &spec, x, y))
            .collect()
    }

    pub fn eval_at_one(&self, x: f64, y: f64) -> f64 {
        eval_spectrum_at(self.spectrum(), &self.spec, x, y)
    }

    /// Wall trace by direct row extraction (walls are grid rows).
    pub fn wall_row(&self, wall: Wall) -> Trace1D {
        assert!(self.spec.is_channel(), "wall_row needs a channel field");
        let j = match wall {
            Wall::Y0 => 0,
            Wall::Y1 => self.spec.ny,
        };
        Trace1D {
            lx: self.spec.lx,
            values: self.values.row(j).to_owned(),
        }
    }
}

fn phase_tables(spec: &DomainSpec, x: f64, y: f64) -> (Vec<Complex64>, Vec<Complex64>) {
    let nx = spec.nx;
    let rows = spec.rows();
    let ex_base = Complex64::from_polar(1.0, TWO_PI * x / spec.lx);
    let ey_base = Complex64::from_polar(1.0, TWO_PI * y / spec.ly_comp());
    let mut ex = vec![Complex64::new(1.0, 0.0); nx];
    let mut p = Complex64::new(1.0, 0.0);
    for m in 1..=nx / 2 {
        p *= ex_base;
        ex[m] = p;
        if m < nx / 2 {
            ex[nx - m] = p.conj();
        }
    }
    let mut ey = vec![Complex64::new(1.0, 0.0); rows];
    let mut q = Complex64::new(1.0, 0.0);
    for m in 1..=rows / 2 {
        q *= ey_base;
        ey[m] = q;
        if m < rows / 2 {
            ey[rows - m] = q.conj();
        }
    }
    (ex, ey)
}

fn eval_sparse_at(nz: &[(usize, usize, Complex64)], spec: &DomainSpec, x: f64, y: f64) -> f64 {
    let (ex, ey) = phase_tables(spec, x, y);
    let mut acc = Complex64::new(0.0, 0.0);
    for &(j, i, c) in nz {
        acc += c * ex[i] * ey[j];
    }
    acc.re
}

fn eval_spectrum_at(c: &Array2<Complex64>, spec: &DomainSpec, x: f64, y: f64) -> f64 {
    let nx = spec.nx;
    let rows = spec.rows();
    let ex_base = Complex64::from_polar(1.0, TWO_PI * x / spec.lx);
    let ey_base = Complex64::from_polar(1.0, TWO_PI * y / spec.ly_comp());
    let mut ex = vec![Complex64::new(1.0, 0.0); nx];
    let mut p = Complex64::new(1.0, 0.0);
    for m in 1..=nx / 2 {
        p *= ex_base;
        ex[m] = p;
        if m < nx / 2 {
            ex[nx - m] = p.conj();
        }
    }
    let mut ey = vec![Complex64::new(1.0, 0.0); rows];
    let mut q = Complex64::new(1.0, 0.0);
    for m in 1..=rows / 2 {
        q *= ey_base;
        ey[m] = q;
        if m < rows / 2 {
            ey[rows - m] = q.conj();
        }
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..rows {
        let mut row_acc = Complex64::new(0.0, 0.0);
        for i in 0..nx {
            row_acc += c[(j, i)] * ex[i];
        }
        acc += row_acc * ey[j];
    }
    acc.re
}

macro_rules! field_binop {
    ($trait:ident, $method:ident, $op:tt) => {
        impl std::ops::$trait<&ScalarField> for &ScalarField {
            type Output = ScalarField;
            fn $method(self, rhs: &ScalarField) -> ScalarField {
                assert_eq!(self.spec, rhs.spec, "domain mismatch");
                let parity = self
                    .parity
                    .combine(rhs.parity)
                    .unwrap_or_else(|| panic!(
                        "parity mismatch: {:?} {} {:?} (use ScalarField::mix for deliberate mixing)",
                        self.parity, stringify!($op), rhs.parity
                    ));
                ScalarField {
                    spec: self.spec,
                    parity,
                    values: &self.values $op &rhs.values,
                    spectrum: OnceLock::new(),
                }
            }
        }
    };
}

field_binop!(Add, add, +);
field_binop!(Sub, sub, -);

/// Channel wall selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Wall {
    Y0,
    Y1,
}

impl Wall {
    /// Outward normal is ∓e_y: −1 at Y0, +1 at Y1 map ∂_ν = normal_sign·∂_y.
    pub fn normal_sign(&self) -> f64 {
        match self {
            Wall::Y0 => -1.0,
            Wall::Y1 => 1.0,
        }
    }
}

/// A field on the wall circle (1-D periodic in x).
#[derive(Clone, Debug)]
pub struct Trace1D {
    pub lx: f64,
    pub values: Array1<f64>,
}

impl Trace1D {
    pub fn from_values(lx: f64, values: Array1<f64>) -> Self {
        Trace1D { lx, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    /// 1-D spectral H^s norm on the wall circle.
    pub fn norm(&self, s: SobolevIndex, convention: Option<NormConvention>) -> NormResult {
        let convention = convention.unwrap_or_else(|| s.default_convention());
        let n = self.len();
        let coeffs = fft::forward_1d(self.values.as_slice().expect("contiguous"));
        let mut sum = 0.0;
        for (i, c) in coeffs.iter().enumerate() {
            let k = TWO_PI * fft::signed_mode(i, n) as f64 / self.lx;
            sum += norm_weight(k * k, s, convention) * c.norm_sqr();
        }
        NormResult { value: (self.lx * sum).sqrt(), convention }
    }

    pub fn hs(&self, s: f64) -> f64 {
        self.norm(SobolevIndex(s), None).value
    }
}

/// Trace of `f` on a wall with its boundary norm and the measured constant of
/// the restriction inequality ‖Rf‖_{∂,s−1/2} ≤ K‖f‖_s.
pub struct WallTrace {
    pub trace: Trace1D,
    pub boundary_norm: NormResult,
    /// ‖Rf‖_{∂,s−1/2} / ‖f‖_s, reported (not asserted).
    pub restriction_ratio: f64,
}

/// Evaluate the y-expansion of `f` on a wall and measure the restriction map.
pub fn wall_trace(f: &ScalarField, wall: Wall, s: SobolevIndex) -> Result<WallTrace> {
    if !f.spec().is_channel() {
        return Err(Error::NoBoundary);
    }
    let trace = f.wall_row(wall);
    let bs = SobolevIndex::new((s.0 - 0.5).max(0.0))?;
    let boundary_norm = trace.norm(bs, None);
    let interior = f.sobolev_norm(s, None).value;
    let restriction_ratio = if interior > 0.0 { boundary_norm.value / interior } else { 0.0 };
    Ok(WallTrace { trace, boundary_norm, restriction_ratio })
}

/// Two scalar components; velocity-class channel fields have (EvenInY,
/// OddInY) components so the slip condition u_y = 0 holds on the walls
/// exactly.
#[derive(Clone, Debug)]
pub struct VectorField {
    pub x: ScalarField,
    pub y: ScalarField,
}

impl VectorField {
    pub fn new(x: ScalarField, y: ScalarField) -> Self {
        assert_eq!(x.spec, y.spec, "component domain mismatch");
        VectorField { x, y }
    }

    /// Velocity-class constructor; rejects parity combinations that would let
    /// fluid pass through the walls.
    pub fn velocity(x: ScalarField, y: ScalarField) -> Result<Self> {
        if x.spec != y.spec {
            return Err(Error::DomainMismatch("vector components on different grids".into()));
        }
        let ok = match x.spec.geometry {
            Geometry::Torus2D => x.parity == Parity::Periodic && y.parity == Parity::Periodic,
            Geometry::Channel2D => x.parity == Parity::EvenInY && y.parity == Parity::OddInY,
        };
        if !ok {
            return Err(Error::Parity(format!(
                "velocity field needs (EvenInY, OddInY) on the channel, got ({:?}, {:?})",
                x.parity, y.parity
            )));
        }
        Ok(VectorField { x, y })
    }

    pub fn zeros_velocity(spec: DomainSpec) -> Self {
        match spec.geometry {
            Geometry::Torus2D => VectorField::new(
                ScalarField::zeros(spec, Parity::Periodic),
                ScalarField::zeros(spec, Parity::Periodic),
            ),
            Geometry::Channel2D => VectorField::new(
                ScalarField::zeros(spec, Parity::EvenInY),
                ScalarField::zeros(spec, Parity::OddInY),
            ),
        }
    }

    pub fn spec(&self) -> &DomainSpec {
        self.x.spec()
    }

    pub fn is_velocity_class(&self) -> bool {
        match self.spec().geometry {
            Geometry::Torus2D => true,
            Geometry::Channel2D => {
                self.x.parity == Parity::EvenInY && self.y.parity == Parity::OddInY
            }
        }
    }

    pub fn div(&self) -> ScalarField {
        &self.x.dx() + &self.y.dy()
    }

    /// δ = −div, the formal adjoint of ∇.
    pub fn delta(&self) -> ScalarField {
        self.div().scale(-1.0)
    }

    /// Directional derivative ∇_u h (dealiased products).
    pub fn advect_scalar(&self, h: &ScalarField) -> ScalarField {
        &self.x.mul(&h.dx()) + &self.y.mul(&h.dy())
    }

    /// ∇_u w componentwise.
    pub fn advect_vector(&self, w: &VectorField) -> VectorField {
        VectorField::new(self.advect_scalar(&w.x), self.advect_scalar(&w.y))
    }

    pub fn sobolev_norm(&self, s: SobolevIndex, convention: Option<NormConvention>) -> NormResult {
        let a = self.x.sobolev_norm(s, convention);
        let b = self.y.sobolev_norm(s, convention);
        NormResult { value: (a.value * a.value + b.value * b.value).sqrt(), convention: a.convention }
    }

    pub fn hs(&self, s: f64) -> f64 {
        self.sobolev_norm(SobolevIndex(s), None).value
    }

    pub fn l2(&self) -> f64 {
        self.hs(0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.x.max_abs().max(self.y.max_abs())
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn scale(&self, a: f64) -> VectorField {
        VectorField::new(self.x.scale(a), self.y.scale(a))
    }

    pub fn dot(&self, other: &VectorField) -> ScalarField {
        &self.x.mul_raw(&other.x) + &self.y.mul_raw(&other.y)
    }

    /// ∫ ⟨self, other⟩ by exact quadrature.
    pub fn inner(&self, other: &VectorField) -> f64 {
        self.dot(other).integral()
    }

    pub fn dealiased(&self) -> VectorField {
        VectorField::new(self.x.dealiased(), self.y.dealiased())
    }
}

impl std::ops::Add<&VectorField> for &VectorField {
    type Output = VectorField;
    fn add(self, rhs: &VectorField) -> VectorField {
        VectorField::new(&self.x + &rhs.x, &self.y + &rhs.y)
    }
}

impl std::ops::Sub<&VectorField> for &VectorField {
    type Output = VectorField;
    fn sub(self, rhs: &VectorField) -> VectorField {
        VectorField::new(&self.x - &rhs.x, &self.y - &rhs.y)
    }
}

/// Random band-limited scalar with |modes| ≤ `max_mode` and smooth (1/(1+m²))
/// amplitude decay. Deterministic given the generator state.
pub fn random_scalar(
    spec: DomainSpec,
    parity: Parity,
    max_mode: usize,
    rng: &mut crate::rng::Rng,
) -> ScalarField {
    let mut terms: Vec<(f64, f64, f64, f64)> = Vec::new(); // (mx, my, amp, phase)
    for mx in 0..=max_mode {
        for my in 0..=max_mode {
            if mx == 0 && my == 0 {
                continue;
            }
            let amp = rng.symmetric() / (1.0 + (mx * mx + my * my) as f64);
            let phase = rng.uniform() * TWO_PI;
            terms.push((mx as f64, my as f64, amp, phase));
        }
    }
    let lx = spec.lx;
    let ly = spec.ly_comp();
    match parity {
        Parity::Periodic => ScalarField::from_fn(spec, parity, move |x, y| {
            terms
                .iter()
                .map(|&(mx, my, a, p)| a * (TWO_PI * (mx * x / lx + my * y / ly) + p).cos())
                .sum()
        }),
        Parity::EvenInY => ScalarField::from_fn(spec, parity, move |x, y| {
            terms
                .iter()
                .map(|&(mx, my, a, p)| {
                    a * (TWO_PI * mx * x / lx + p).cos() * (TWO_PI * my * y / ly).cos()
                })
                .sum()
        }),
        Parity::OddInY => ScalarField::from_fn(spec, parity, move |x, y| {
            terms
                .iter()
                .map(|&(mx, my, a, p)| {
                    if my == 0.0 {
                        0.0
                    } else {
                        a * (TWO_PI * mx * x / lx + p).cos() * (TWO_PI * my * y / ly).sin()
                    }
                })
                .sum()
        }),
        Parity::MixedInY => {
            let e = random_scalar(spec, Parity::EvenInY, max_mode, rng);
            let o = random_scalar(spec, Parity::OddInY, max_mode, rng);
            ScalarField::mix(&e, &o)
        }
    }
}

/// Random velocity-class vector field.
pub fn random_velocity(spec: DomainSpec, max_mode: usize, rng: &mut crate::rng::Rng) -> VectorField {
    match spec.geometry {
        Geometry::Torus2D => VectorField::new(
            random_scalar(spec, Parity::Periodic, max_mode, rng),
            random_scalar(spec, Parity::Periodic, max_mode, rng),
        ),
        Geometry::Channel2D => VectorField::new(
            random_scalar(spec, Parity::EvenInY, max_mode, rng),
            random_scalar(spec, Parity::OddInY, max_mode, rng),
        ),
    }
}

/// Random divergence-free velocity (via the stream function curl).
pub fn random_solenoidal(spec: DomainSpec, max_mode: usize, rng: &mut crate::rng::Rng) -> VectorField {
    let psi_parity = match spec.geometry {
        Geometry::Torus2D => Parity::Periodic,
        // Odd stream function gives (Even, Odd) velocity components.
        Geometry::Channel2D => Parity::OddInY,
    };
    let psi = random_scalar(spec, psi_parity, max_mode, rng);
    VectorField::new(psi.dy(), psi.dx().scale(-1.0))
}
