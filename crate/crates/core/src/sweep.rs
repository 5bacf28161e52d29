//! The experiment harness: flat key-value configuration, matched-data
//! k-sweeps with slope fitting, and report emission.

use crate::analysis::{cascade, CascadeReport};
use crate::domain::{DomainSpec, Geometry, Parity, ScalarField, VectorField};
use crate::elliptic::project_solenoidal;
use crate::eos::{assumption_audit, Eos, EosFamily};
use crate::error::{Error, Result};
use crate::lagrange::{approx_sequence, ApproxSequence, SequenceOptions};
use crate::rng::Rng;
use crate::solvers::{
    rk4_compressible_step, rk4_euler_step, CompressibleState, EulerState, DEFAULT_CFL,
};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

/// Flat `key = value` text configuration ('#' comments allowed).
#[derive(Clone, Debug, Default)]
pub struct Config {
    map: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{raw}`", lineno + 1))
            })?;
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Config { map })
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.map.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("{key} = `{v}`: {e}"))),
        }
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<usize>()
                .map_err(|e| Error::Config(format!("{key} = `{v}`: {e}"))),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.map.get(key).map(|s| s.as_str()) {
            None => Ok(default),
            Some("true") | Some("1") => Ok(true),
            Some("false") | Some("0") => Ok(false),
            Some(v) => Err(Error::Config(format!("{key} = `{v}`: expected true/false"))),
        }
    }

    pub fn f64_list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.map.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Config(format!("{key} entry `{s}`: {e}")))
                })
                .collect(),
        }
    }

    pub fn domain(&self) -> Result<DomainSpec> {
        let geometry = match self.get("domain.geometry").unwrap_or("torus") {
            "torus" => Geometry::Torus2D,
            "channel" => Geometry::Channel2D,
            other => return Err(Error::Config(format!("domain.geometry = `{other}`"))),
        };
        DomainSpec::new(
            geometry,
            self.usize_or("domain.nx", 64)?,
            self.usize_or("domain.ny", 64)?,
            self.f64_or("domain.lx", 1.0)?,
        )
    }

    pub fn eos(&self) -> Result<Eos> {
        let family = match self.get("eos.family").unwrap_or("gamma") {
            "linear" => EosFamily::Linear,
            "gamma" | "gamma-law" => EosFamily::GammaLaw,
            other => return Err(Error::Config(format!("eos.family = `{other}`"))),
        };
        let eos = Eos {
            family,
            k: self.f64_or("eos.k", 1.0e3)?,
            gamma: self.f64_or("eos.gamma", 1.4)?,
        };
        eos.validate()?;
        Ok(eos)
    }

    pub fn seed(&self) -> Result<u64> {
        Ok(self.usize_or("seed", 7)? as u64)
    }
}

// ---------------------------------------------------------------------------
// matched initial data
// ---------------------------------------------------------------------------

/// Well-prepared data family: u₀ₖ = v₀ + k^{−1/2}∇χ, f₀ₖ = k^{−1}χ₂ with
/// fixed smooth χ, χ₂, realizing the hypothesis scalings
/// ‖δu₀ₖ‖ ≤ a₂/√k, ‖f₀ₖ‖ ≤ a₂/k.
pub struct DataFamily {
    pub v0: VectorField,
    pub chi: ScalarField,
    pub chi2: ScalarField,
    pub perturb: bool,
}

impl DataFamily {
    pub fn generate(spec: DomainSpec, seed: u64, amplitude: f64, perturb: bool) -> Result<Self> {
        let mut rng = Rng::new(seed);
        let raw = crate::domain::random_solenoidal(spec, 2, &mut rng);
        let v0 = project_solenoidal(&raw.scale(amplitude / raw.max_abs()))?;
        let parity = if spec.is_channel() { Parity::EvenInY } else { Parity::Periodic };
        let chi = crate::domain::random_scalar(spec, parity, 2, &mut rng).scale(0.2);
        let chi2 = crate::domain::random_scalar(spec, parity, 2, &mut rng).scale(0.2);
        Ok(DataFamily { v0, chi, chi2, perturb })
    }

    pub fn at_k(&self, k: f64) -> (VectorField, ScalarField) {
        if self.perturb {
            let grad_chi = self.chi.grad();
            let u = &self.v0 + &grad_chi.scale(1.0 / k.sqrt());
            let f = self.chi2.scale(1.0 / k);
            (u, f)
        } else {
            let spec = *self.v0.spec();
            let parity = if spec.is_channel() { Parity::EvenInY } else { Parity::Periodic };
            (self.v0.clone(), ScalarField::zeros(spec, parity))
        }
    }
}

// ---------------------------------------------------------------------------
// slope fitting
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
}

/// Least squares on (log k, log value); stderr is the standard error of the
/// fitted slope.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 3 {
        return Err(Error::Config(format!(
            "slope fit needs ≥ 3 points, got {}",
            points.len()
        )));
    }
    for (i, &(_, v)) in points.iter().enumerate() {
        if !(v > 0.0) {
            return Err(Error::NonPositiveFit { index: i });
        }
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let sxy: f64 = xs.iter().zip(ys.iter()).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let dof = (n - 2.0).max(1.0);
    let ss_res: f64 = xs
        .iter()
        .zip(ys.iter())
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let stderr = (ss_res / dof / sxx).sqrt();
    Ok(SlopeFit { slope, intercept, stderr })
}

// ---------------------------------------------------------------------------
// the sweep
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct KCell {
    pub k: f64,
    /// sup over matched sample times of ‖u_k − v‖₁
    pub sup_u_err_h1: f64,
    /// top-norm comparison (dominated by dealiasing noise at desk scale;
    /// emitted, not fitted)
    pub sup_u_err_h3: f64,
    /// sup over matched times of ‖ρ_k − 1‖₀
    pub sup_rho_err_l2: f64,
    pub cascade: Vec<CascadeReport>,
    /// Lagrangian pair increments ‖(ζ_n,ζ̇_n) − (ζ_{n−1},ζ̇_{n−1})‖₃ per n
    pub seq_lagrangian_increments: Vec<f64>,
    /// Eulerian increments ‖u_n − u_{n−1}‖₁ per n
    pub seq_eulerian_increments: Vec<f64>,
    pub grad_g1_sup_h3: f64,
    /// empirical horizon: first CFL/NaN/degenerate event, or t_final
    pub horizon: f64,
    pub a1_fit: f64,
    pub error: Option<String>,
}

#[derive(Serialize)]
pub struct SweepResult {
    pub k_list: Vec<f64>,
    pub t_final: f64,
    pub cells: Vec<KCell>,
    pub slope_u_h1: Option<SlopeFit>,
    pub slope_rho_l2: Option<SlopeFit>,
    pub slope_seq_n1: Option<SlopeFit>,
    pub slope_seq_n2: Option<SlopeFit>,
    /// max/min across k of k‖f‖₄, √k‖ḟ‖₃, ‖f̈‖₂, ‖f⃛‖₁/√k at matched times
    pub cascade_variation: Option<[f64; 4]>,
    /// fitted constants ledger (prefactors exp(intercept) etc.)
    pub constants: BTreeMap<String, f64>,
}

struct IncompressibleReference {
    sample_times: Vec<f64>,
    samples: Vec<VectorField>,
}

fn incompressible_reference(
    v0: &VectorField,
    t_final: f64,
    samples: usize,
    dt_safety: f64,
) -> Result<IncompressibleReference> {
    let mut state = EulerState::new(v0.clone(), 0.0)?;
    let sample_dt = t_final / samples as f64;
    let dt_cfl = state.cfl_dt(dt_safety);
    let per = (sample_dt / dt_cfl).ceil().max(1.0) as usize;
    let dt = sample_dt / per as f64;
    let mut sample_times = Vec::with_capacity(samples);
    let mut out = Vec::with_capacity(samples);
    for _ in 0..samples {
        for _ in 0..per {
            state = rk4_euler_step(&state, dt)?;
        }
        sample_times.push(state.t);
        out.push(state.v.clone());
    }
    Ok(IncompressibleReference { sample_times, samples: out })
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    k: f64,
    family: &DataFamily,
    eos_template: &Eos,
    reference: &IncompressibleReference,
    t_final: f64,
    dt_safety: f64,
    seq_opts: Option<SequenceOptions>,
) -> Result<KCell> {
    let eos = Eos { k, ..*eos_template };
    let (u0, f0) = family.at_k(k);
    let mut state = CompressibleState::new(u0.clone(), f0.clone(), 0.0)?;

    let samples = reference.sample_times.len();
    let sample_dt = t_final / samples as f64;
    let dt_cfl = state.cfl_dt(&eos, dt_safety)?;
    let per = (sample_dt / dt_cfl).ceil().max(1.0) as usize;
    let dt = sample_dt / per as f64;

    let mut sup_u_h1 = 0.0f64;
    let mut sup_u_h3 = 0.0f64;
    let mut sup_rho = 0.0f64;
    let mut cascades = Vec::with_capacity(samples);
    let mut f_states: Vec<ScalarField> = Vec::new();
    let mut horizon = t_final;
    let mut error = None;

    'outer: for s in 0..samples {
        for _ in 0..per {
            let dt_max = state.cfl_dt(&eos, dt_safety)?;
            if dt > dt_max * 1.05 {
                horizon = state.t;
                error = Some(format!("CFL tightened below the run step at t = {:.4}", state.t));
                break 'outer;
            }
            match rk4_compressible_step(&state, &eos, dt) {
                Ok(next) => state = next,
                Err(e) => {
                    horizon = state.t;
                    error = Some(e.to_string());
                    break 'outer;
                }
            }
        }
        let v = &reference.samples[s];
        sup_u_h1 = sup_u_h1.max((&state.u - v).hs(1.0));
        sup_u_h3 = sup_u_h3.max((&state.u - v).hs(3.0));
        let rho_minus_1 = state.f.map(|x| x.exp() - 1.0);
        sup_rho = sup_rho.max(rho_minus_1.l2());
        cascades.push(cascade(&state, &eos)?.report);
        f_states.push(state.f.clone());
    }

    let audit = assumption_audit(&eos, &f_states.iter().collect::<Vec<_>>())?;

    let (mut seq_lagr, mut seq_eul, mut g1) = (Vec::new(), Vec::new(), 0.0);
    if let Some(opts) = seq_opts {
        if error.is_none() {
            let seq: ApproxSequence = approx_sequence(&u0, &f0, &eos, opts)?;
            for n in 1..seq.levels.len() {
                seq_lagr.push(seq.lagrangian_increment(n, n - 1));
                seq_eul.push(seq.eulerian_increment(n, n - 1, 8)?);
            }
            g1 = seq.levels.get(1).map(|l| l.grad_g_sup_h3).unwrap_or(0.0);
        }
    }

    Ok(KCell {
        k,
        sup_u_err_h1: sup_u_h1,
        sup_u_err_h3: sup_u_h3,
        sup_rho_err_l2: sup_rho,
        cascade: cascades,
        seq_lagrangian_increments: seq_lagr,
        seq_eulerian_increments: seq_eul,
        grad_g1_sup_h3: g1,
        horizon,
        a1_fit: audit.a1_fit,
        error,
    })
}

/// Run the full sweep described by the configuration. Per-k failures are
/// recorded in their cell; the sweep continues and flags incomplete cells.
pub fn run_sweep(config: &Config) -> Result<SweepResult> {
    let spec = config.domain()?;
    let eos_template = config.eos()?;
    let k_list = config.f64_list("sweep.k_list", &[1.0e2, 1.0e3, 1.0e4])?;
    let t_final = config.f64_or("solver.t_final", 0.5)?;
    let dt_safety = config.f64_or("solver.dt_safety", DEFAULT_CFL)?;
    let samples = config.usize_or("solver.snapshot_every", 10)?;
    let n_max = config.usize_or("sweep.n_max", 0)?;
    let parallel = config.bool_or("sweep.parallel", false)?;
    let perturb = config.bool_or("sweep.perturb", true)?;
    let amplitude = config.f64_or("data.amplitude", 0.5)?;
    let seed = config.seed()?;

    let family = DataFamily::generate(spec, seed, amplitude, perturb)?;
    let reference = incompressible_reference(&family.v0, t_final, samples, dt_safety)?;

    let seq_opts = if n_max > 0 {
        Some(SequenceOptions {
            n_max,
            t_final: config.f64_or("sweep.sequence_t", (t_final * 0.5).min(0.25))?,
            picard_tol: config.f64_or("sweep.picard_tol", 1e-8)?,
            ..SequenceOptions::default()
        })
    } else {
        None
    };

    let job = |&k: &f64| -> KCell {
        match run_cell(k, &family, &eos_template, &reference, t_final, dt_safety, seq_opts) {
            Ok(cell) => cell,
            Err(e) => KCell {
                k,
                sup_u_err_h1: f64::NAN,
                sup_u_err_h3: f64::NAN,
                sup_rho_err_l2: f64::NAN,
                cascade: Vec::new(),
                seq_lagrangian_increments: Vec::new(),
                seq_eulerian_increments: Vec::new(),
                grad_g1_sup_h3: 0.0,
                horizon: 0.0,
                a1_fit: f64::NAN,
                error: Some(e.to_string()),
            },
        }
    };
    let cells: Vec<KCell> = if parallel {
        use rayon::prelude::*;
        k_list.par_iter().map(job).collect()
    } else {
        k_list.iter().map(job).collect()
    };

    let complete: Vec<&KCell> = cells.iter().filter(|c| c.error.is_none()).collect();
    let fit_of = |f: &dyn Fn(&KCell) -> Option<f64>| -> Option<SlopeFit> {
        let pts: Vec<(f64, f64)> =
            complete.iter().filter_map(|c| f(c).map(|v| (c.k, v))).collect();
        if pts.len() >= 3 {
            fit_slope(&pts).ok()
        } else {
            None
        }
    };
    let slope_u_h1 = fit_of(&|c| Some(c.sup_u_err_h1));
    let slope_rho_l2 = fit_of(&|c| Some(c.sup_rho_err_l2));
    let slope_seq_n1 = fit_of(&|c| c.seq_eulerian_increments.first().copied());
    let slope_seq_n2 = fit_of(&|c| c.seq_eulerian_increments.get(1).copied());

    // cascade scaling spread at the final sample time
    let cascade_variation = if complete.len() >= 2
        && complete.iter().all(|c| !c.cascade.is_empty())
    {
        let mut ranges = [[f64::INFINITY, 0.0f64]; 4];
        for c in &complete {
            let rep = c.cascade.last().unwrap();
            let scaled = [
                c.k * rep.f_h4,
                c.k.sqrt() * rep.fdot_h3,
                rep.fddot_h2,
                rep.fdddot_h1 / c.k.sqrt(),
            ];
            for (r, v) in ranges.iter_mut().zip(scaled.iter()) {
                r[0] = r[0].min(*v);
                r[1] = r[1].max(*v);
            }
        }
        Some([
            ranges[0][1] / ranges[0][0],
            ranges[1][1] / ranges[1][0],
            ranges[2][1] / ranges[2][0],
            ranges[3][1] / ranges[3][0],
        ])
    } else {
        None
    };

    let mut constants = BTreeMap::new();
    if let Some(f) = &slope_u_h1 {
        constants.insert("a_u_h1_prefactor".to_string(), f.intercept.exp());
    }
    if let Some(f) = &slope_rho_l2 {
        constants.insert("a_rho_l2_prefactor".to_string(), f.intercept.exp());
    }
    for c in &complete {
        constants.insert(format!("a1_assumption_k{:.0}", c.k), c.a1_fit);
        constants.insert(format!("grad_g1_sqrtk_k{:.0}", c.k), c.grad_g1_sup_h3 * c.k.sqrt());
    }

    Ok(SweepResult {
        k_list,
        t_final,
        cells,
        slope_u_h1,
        slope_rho_l2,
        slope_seq_n1,
        slope_seq_n2,
        cascade_variation,
        constants,
    })
}

/// Write the sweep outputs: JSON summary, per-k CSV, gnuplot tables.
pub fn write_outputs(result: &SweepResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    crate::io::write_json(&dir.join("summary.json"), result)?;
    let mut csv = String::from(
        "k,sup_u_err_h1,sup_u_err_h3,sup_rho_err_l2,seq_incr_n1,seq_incr_n2,horizon,a1_fit,error\n",
    );
    for c in &result.cells {
        csv.push_str(&format!(
            "{:.6e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.6e},{:.6e},{}\n",
            c.k,
            c.sup_u_err_h1,
            c.sup_u_err_h3,
            c.sup_rho_err_l2,
            c.seq_eulerian_increments.first().copied().unwrap_or(f64::NAN),
            c.seq_eulerian_increments.get(1).copied().unwrap_or(f64::NAN),
            c.horizon,
            c.a1_fit,
            c.error.clone().unwrap_or_default()
        ));
    }
    std::fs::write(dir.join("sweep.csv"), csv)?;
    let pts_u: Vec<(f64, f64)> = result
        .cells
        .iter()
        .filter(|c| c.error.is_none())
        .map(|c| (c.k, c.sup_u_err_h1))
        .collect();
    crate::io::write_dat(&dir.join("u_err.dat"), "k  sup_t |u_k - v|_H1", &pts_u)?;
    let pts_rho: Vec<(f64, f64)> = result
        .cells
        .iter()
        .filter(|c| c.error.is_none())
        .map(|c| (c.k, c.sup_rho_err_l2))
        .collect();
    crate::io::write_dat(&dir.join("rho_err.dat"), "k  sup_t |rho_k - 1|_L2", &pts_rho)?;
    Ok(())
}
