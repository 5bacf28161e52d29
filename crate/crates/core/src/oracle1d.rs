//! Closed-form 1-D Burgers flow and sensitivity oracle.
//!
//! The pre-shock solution of ∂_t u + u∂_x u = 0 is u(t) = u₀∘ζ(t)⁻¹ with
//! ζ(t,x) = x + t·u₀(x); its initial-data derivative in direction z₀ is
//! z(t)∘ζ(t) = z₀/(1 + t∂_x u₀). These closed forms certify the generic
//! sensitivity machinery, and a pseudo-spectral solve of the same PDE
//! certifies the solver class against them.

use crate::domain::TWO_PI;
use crate::error::{Error, Result};
use crate::fft;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

/// Samples on the periodic unit interval, x_i = i/n.
#[derive(Clone, Debug)]
pub struct Profile1D {
    pub values: Vec<f64>,
}

impl Profile1D {
    pub fn from_fn(n: usize, f: impl Fn(f64) -> f64) -> Self {
        Profile1D { values: (0..n).map(|i| f(i as f64 / n as f64)).collect() }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        Profile1D { values: vec![c; n] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spectrum(&self) -> Vec<Complex64> {
        fft::forward_1d(&self.values)
    }

    /// Exact trigonometric evaluation at an arbitrary point.
    pub fn eval_at(&self, x: f64) -> f64 {
        eval_coeffs(&self.spectrum(), x)
    }

    pub fn derivative(&self) -> Profile1D {
        let n = self.len();
        let mut c = self.spectrum();
        for (i, v) in c.iter_mut().enumerate() {
            let m = fft::signed_mode(i, n);
            *v = if i == n / 2 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, TWO_PI * m as f64) * *v
            };
        }
        Profile1D { values: fft::inverse_1d(&c) }
    }

    /// 2/3-rule dealiasing.
    pub fn dealiased(&self) -> Profile1D {
        let n = self.len();
        let cut = n as i64 / 3;
        let mut c = self.spectrum();
        for (i, v) in c.iter_mut().enumerate() {
            if fft::signed_mode(i, n).abs() > cut {
                *v = Complex64::new(0.0, 0.0);
            }
        }
        Profile1D { values: fft::inverse_1d(&c) }
    }

    /// 1-D spectral H^s norm (integer-sum multiplier at integer s).
    pub fn hs(&self, s: f64) -> f64 {
        let n = self.len();
        let c = self.spectrum();
        let si = crate::domain::SobolevIndex(s);
        let conv = si.default_convention();
        let mut sum = 0.0;
        for (i, v) in c.iter().enumerate() {
            let kk = TWO_PI * fft::signed_mode(i, n) as f64;
            let w = match conv {
                crate::domain::NormConvention::IntegerSum => {
                    let mut acc = 1.0;
                    let mut p = 1.0;
                    for _ in 0..s.round() as usize {
                        p *= kk * kk;
                        acc += p;
                    }
                    acc
                }
                crate::domain::NormConvention::Interpolated => (1.0 + kk * kk).powf(s),
            };
            sum += w * v.norm_sqr();
        }
        sum.sqrt()
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }
}

fn eval_coeffs(c: &[Complex64], x: f64) -> f64 {
    let n = c.len();
    let base = Complex64::from_polar(1.0, TWO_PI * x);
    let mut acc = c[0];
    let mut p = Complex64::new(1.0, 0.0);
    for m in 1..=n / 2 {
        p *= base;
        acc += c[m] * p;
        if m < n - m {
            acc += c[n - m] * p.conj();
        }
    }
    acc.re
}

/// First time 1 + t·min(u₀′) reaches zero (∞ for non-compressive data).
pub fn critical_time(u0: &Profile1D) -> f64 {
    let dmin = u0.derivative().values.iter().cloned().fold(f64::INFINITY, f64::min);
    if dmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / dmin
    }
}

fn check_horizon(u0: &Profile1D, t: f64) -> Result<()> {
    let t_star = critical_time(u0);
    if t >= t_star {
        return Err(Error::ShockHorizon { t, t_star });
    }
    Ok(())
}

/// Invert ζ(x) = x + t·u₀(x) = y by monotone bisection plus Newton.
fn invert_characteristic(c_u0: &[Complex64], c_du0: &[Complex64], t: f64, y: f64) -> f64 {
    let g = |x: f64| x + t * eval_coeffs(c_u0, x) - y;
    // the root lies within max|u₀|·t of y
    let m = c_u0.iter().map(|c| c.norm()).sum::<f64>() * t + 1e-3;
    let (mut lo, mut hi) = (y - m, y + m);
    let mut x = y - t * eval_coeffs(c_u0, y);
    for _ in 0..100 {
        let gx = g(x);
        if gx.abs() <= 1e-13 * (1.0 + y.abs()) {
            return x;
        }
        if gx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let slope = 1.0 + t * eval_coeffs(c_du0, x);
        let newton = x - gx / slope;
        x = if slope > 1e-3 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    x
}

/// u(t) = u₀ ∘ ζ(t)⁻¹ on the grid, pre-shock.
pub fn burgers_exact(u0: &Profile1D, t: f64) -> Result<Profile1D> {
    check_horizon(u0, t)?;
    let c_u0 = u0.spectrum();
    let c_du0 = u0.derivative().spectrum();
    let n = u0.len();
    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let y = i as f64 / n as f64;
            let x = invert_characteristic(&c_u0, &c_du0, t, y);
            eval_coeffs(&c_u0, x)
        })
        .collect();
    Ok(Profile1D { values })
}

/// z(t) on the grid from the closed form z(t)∘ζ(t) = z₀/(1 + t∂_x u₀).
pub fn burgers_sensitivity_exact(u0: &Profile1D, z0: &Profile1D, t: f64) -> Result<Profile1D> {
    check_horizon(u0, t)?;
    let c_u0 = u0.spectrum();
    let c_du0 = u0.derivative().spectrum();
    let c_z0 = z0.spectrum();
    let n = u0.len();
    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let y = i as f64 / n as f64;
            let x = invert_characteristic(&c_u0, &c_du0, t, y);
            eval_coeffs(&c_z0, x) / (1.0 + t * eval_coeffs(&c_du0, x))
        })
        .collect();
    Ok(Profile1D { values })
}

/// Pseudo-spectral RK4 solve of ∂_t u + u∂_x u = 0 (dealiased product).
pub fn burgers_numeric(u0: &Profile1D, t: f64, dt: f64) -> Result<Profile1D> {
    check_horizon(u0, t)?;
    let n = u0.len();
    let dx = 1.0 / n as f64;
    let rhs = |u: &Profile1D| -> Profile1D {
        let du = u.derivative();
        let prod: Vec<f64> =
            u.values.iter().zip(du.values.iter()).map(|(&a, &b)| -a * b).collect();
        Profile1D { values: prod }.dealiased()
    };
    let steps = (t / dt).ceil().max(1.0) as usize;
    let dt = t / steps as f64;
    let mut u = u0.clone();
    let cfl_limit = 0.7 * dx / u.max_abs().max(1e-12);
    if dt > cfl_limit {
        return Err(Error::Cfl { dt, dt_max: cfl_limit });
    }
    let add = |a: &Profile1D, b: &Profile1D, h: f64| Profile1D {
        values: a.values.iter().zip(b.values.iter()).map(|(&x, &y)| x + h * y).collect(),
    };
    for _ in 0..steps {
        let k1 = rhs(&u);
        let k2 = rhs(&add(&u, &k1, 0.5 * dt));
        let k3 = rhs(&add(&u, &k2, 0.5 * dt));
        let k4 = rhs(&add(&u, &k3, dt));
        let mut next = u.clone();
        for i in 0..n {
            next.values[i] += dt / 6.0
                * (k1.values[i] + 2.0 * (k2.values[i] + k3.values[i]) + k4.values[i]);
        }
        if next.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { field: "burgers u", t });
        }
        u = next;
    }
    Ok(u)
}
