//! Thin 2-D complex FFT layer over rustfft with plan caching.
//!
//! Transforms are normalized so that the forward pass returns true Fourier
//! coefficients: f(x) = Σ_m c_m e^{i κ_m x}.

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

struct PlanCache {
    fwd: HashMap<usize, Arc<dyn Fft<f64>>>,
    inv: HashMap<usize, Arc<dyn Fft<f64>>>,
    planner: FftPlanner<f64>,
}

fn cache() -> &'static Mutex<PlanCache> {
    static CACHE: OnceLock<Mutex<PlanCache>> = OnceLock::new();
    CACHE.get_or_init(|| {
        Mutex::new(PlanCache {
            fwd: HashMap::new(),
            inv: HashMap::new(),
            planner: FftPlanner::new(),
        })
    })
}

fn plan(len: usize, forward: bool) -> Arc<dyn Fft<f64>> {
    let mut c = cache().lock().unwrap();
    let PlanCache { fwd, inv, planner } = &mut *c;
    let map = if forward { fwd } else { inv };
    map.entry(len)
        .or_insert_with(|| {
            if forward {
                planner.plan_fft_forward(len)
            } else {
                planner.plan_fft_inverse(len)
            }
        })
        .clone()
}

fn transform_rows(a: &mut Array2<Complex64>, forward: bool) {
    let n = a.ncols();
    let fft = plan(n, forward);
    for mut row in a.rows_mut() {
        let slice = row.as_slice_mut().expect("row must be contiguous");
        fft.process(slice);
    }
}

fn transpose(a: &Array2<Complex64>) -> Array2<Complex64> {
    let (r, c) = a.dim();
    Array2::from_shape_fn((c, r), |(i, j)| a[(j, i)])
}

/// Forward 2-D FFT of real samples, normalized by 1/(rows·cols).
pub fn forward(values: &Array2<f64>) -> Array2<Complex64> {
    let (rows, cols) = values.dim();
    let mut a = values.mapv(|v| Complex64::new(v, 0.0));
    transform_rows(&mut a, true);
    let mut at = transpose(&a);
    transform_rows(&mut at, true);
    let mut out = transpose(&at);
    let scale = 1.0 / (rows * cols) as f64;
    out.mapv_inplace(|c| c * scale);
    out
}

/// Inverse of [`forward`]; returns the real part of the reconstruction.
pub fn inverse(coeffs: &Array2<Complex64>) -> Array2<f64> {
    let mut a = coeffs.clone();
    transform_rows(&mut a, false);
    let mut at = transpose(&a);
    transform_rows(&mut at, false);
    let out = transpose(&at);
    out.mapv(|c| c.re)
}

/// Inverse transform keeping the imaginary part (used by symmetry checks).
pub fn inverse_complex(coeffs: &Array2<Complex64>) -> Array2<Complex64> {
    let mut a = coeffs.clone();
    transform_rows(&mut a, false);
    let mut at = transpose(&a);
    transform_rows(&mut at, false);
    transpose(&at)
}

/// 1-D forward FFT of real samples, normalized by 1/n.
pub fn forward_1d(values: &[f64]) -> Vec<Complex64> {
    let n = values.len();
    let mut a: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan(n, true).process(&mut a);
    let scale = 1.0 / n as f64;
    a.iter_mut().for_each(|c| *c *= scale);
    a
}

/// Inverse of [`forward_1d`]; returns the real part.
pub fn inverse_1d(coeffs: &[Complex64]) -> Vec<f64> {
    let mut a = coeffs.to_vec();
    plan(a.len(), false).process(&mut a);
    a.iter().map(|c| c.re).collect()
}

/// Signed integer mode for bin `i` of an `n`-point transform.
#[inline]
pub fn signed_mode(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}
