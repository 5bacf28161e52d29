//! The equation-of-state family p_k(ρ) with p′_k(1) = k, the sound speed
//! c² = p′(ρ), q = 1/c², and the material-derivative chains of c² and q.
//!
//! Two concrete families stand in for the abstract {p_k}: `Linear`
//! (p = k(ρ−1), constant sound speed, kills every p″ term) and `GammaLaw`
//! (p = (k/γ)(ρ^γ − 1), generic p″ ≠ 0, exercises every chain term).

use crate::domain::{Parity, ScalarField, SobolevIndex};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EosFamily {
    Linear,
    GammaLaw,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Eos {
    pub family: EosFamily,
    /// stiffness scale, p′_k(1) = k
    pub k: f64,
    /// family shape (γ-law only), γ ≥ 1
    pub gamma: f64,
}

impl Eos {
    pub fn linear(k: f64) -> Self {
        Eos { family: EosFamily::Linear, k, gamma: 1.0 }
    }

    pub fn gamma_law(k: f64, gamma: f64) -> Self {
        Eos { family: EosFamily::GammaLaw, k, gamma }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0) {
            return Err(Error::Config(format!("eos.k must be positive, got {}", self.k)));
        }
        if self.family == EosFamily::GammaLaw && self.gamma < 1.0 {
            return Err(Error::Config(format!("eos.gamma must be ≥ 1, got {}", self.gamma)));
        }
        Ok(())
    }

    pub fn pressure(&self, rho: f64) -> f64 {
        match self.family {
            EosFamily::Linear => self.k * (rho - 1.0),
            EosFamily::GammaLaw => self.k / self.gamma * (rho.powf(self.gamma) - 1.0),
        }
    }

    /// ℓ-th derivative p^(ℓ)(ρ), ℓ ≥ 1.
    pub fn dp(&self, ell: usize, rho: f64) -> f64 {
        assert!(ell >= 1);
        match self.family {
            EosFamily::Linear => {
                if ell == 1 {
                    self.k
                } else {
                    0.0
                }
            }
            EosFamily::GammaLaw => {
                // p^(ℓ) = k · Π_{i=1}^{ℓ−1}(γ−i) · ρ^{γ−ℓ}
                let mut coeff = self.k;
                for i in 1..ell {
                    coeff *= self.gamma - i as f64;
                }
                coeff * rho.powf(self.gamma - ell as f64)
            }
        }
    }

    /// Sound speed squared as a function of f = log ρ.
    pub fn c2_of_f(&self, f: f64) -> f64 {
        self.dp(1, f.exp())
    }

    /// ∂_f c²(f), the quasilinear coefficient of the sensitivity system.
    pub fn dc2_df(&self, f: f64) -> f64 {
        let rho = f.exp();
        self.dp(2, rho) * rho
    }
}

/// Pointwise thermodynamic fields on a grid.
pub struct EosEval {
    pub rho: ScalarField,
    pub p: ScalarField,
    pub c2: ScalarField,
    pub q: ScalarField,
}

/// Evaluate ρ = e^f, p, c² = p′(ρ) and q = 1/c² pointwise.
pub fn eos_eval(eos: &Eos, f: &ScalarField) -> Result<EosEval> {
    let rho = f.map(f64::exp);
    let c2 = rho.map(|r| eos.dp(1, r));
    let c2_min = c2.values().iter().cloned().fold(f64::INFINITY, f64::min);
    if !(c2_min > 0.0) {
        return Err(Error::Unphysical(format!("c² ≤ 0 somewhere (min {c2_min:.3e})")));
    }
    let p = rho.map(|r| eos.pressure(r));
    let q = c2.map(|v| 1.0 / v);
    Ok(EosEval { rho, p, c2, q })
}

/// The first three material derivatives of c² and q along a trajectory,
/// assembled from spatial data at a single time.
pub struct MaterialChain {
    pub c2dot: ScalarField,
    pub c2ddot: ScalarField,
    pub c2dddot: ScalarField,
    pub qdot: ScalarField,
    pub qddot: ScalarField,
    pub qdddot: ScalarField,
}

/// Chain rule for c² = p′(e^f) with ρ̇ = ρḟ:
///   (c²)˙  = p″ρ ḟ
///   (c²)¨  = p‴ρ²ḟ² + p″ρ(ḟ² + f̈)
///   (c²)⃛ = p⁗ρ³ḟ³ + 3p‴ρ²(ḟ³ + ḟf̈) + p″ρ(ḟ³ + 3ḟf̈ + f⃛)
/// and the family-independent q-chain q = 1/c²:
///   q̇ = −q²(c²)˙,  q̈ = −q²(c²)¨ + 2q³((c²)˙)²,
///   q⃛ = −q²(c²)⃛ + 6q³(c²)˙(c²)¨ − 6q⁴((c²)˙)³.
pub fn c2_material_chain(
    eos: &Eos,
    f: &ScalarField,
    fdot: &ScalarField,
    fddot: &ScalarField,
    fdddot: &ScalarField,
) -> MaterialChain {
    let spec = *f.spec();
    let n = f.values().len();
    assert!(fdot.values().len() == n && fddot.values().len() == n && fdddot.values().len() == n);

    let mut c2dot = ScalarField::zeros(spec, f.parity()).values().clone();
    let mut c2ddot = c2dot.clone();
    let mut c2dddot = c2dot.clone();
    let mut qdot = c2dot.clone();
    let mut qddot = c2dot.clone();
    let mut qdddot = c2dot.clone();

    for (idx, (((fv, f1), f2), f3)) in f
        .values()
        .iter()
        .zip(fdot.values().iter())
        .zip(fddot.values().iter())
        .zip(fdddot.values().iter())
        .enumerate()
    {
        let rho = fv.exp();
        let p2 = eos.dp(2, rho);
        let p3 = eos.dp(3, rho);
        let p4 = eos.dp(4, rho);
        let (d1, d2, d3) = (*f1, *f2, *f3);
        let c2d = p2 * rho * d1;
        let c2dd = p3 * rho * rho * d1 * d1 + p2 * rho * (d1 * d1 + d2);
        let c2ddd = p4 * rho.powi(3) * d1.powi(3)
            + 3.0 * p3 * rho * rho * (d1.powi(3) + d1 * d2)
            + p2 * rho * (d1.powi(3) + 3.0 * d1 * d2 + d3);
        let q = 1.0 / eos.dp(1, rho);
        let qd = -q * q * c2d;
        let qdd = -q * q * c2dd + 2.0 * q.powi(3) * c2d * c2d;
        let qddd =
            -q * q * c2ddd + 6.0 * q.powi(3) * c2d * c2dd - 6.0 * q.powi(4) * c2d.powi(3);
        let flat = idx;
        let (r, c) = (flat / spec.nx, flat % spec.nx);
        c2dot[(r, c)] = c2d;
        c2ddot[(r, c)] = c2dd;
        c2dddot[(r, c)] = c2ddd;
        qdot[(r, c)] = qd;
        qddot[(r, c)] = qdd;
        qdddot[(r, c)] = qddd;
    }

    let wrap = |vals| ScalarField::from_values(spec, chain_parity(f, fdot, fddot, fdddot), vals);
    MaterialChain {
        c2dot: wrap(c2dot),
        c2ddot: wrap(c2ddot),
        c2dddot: wrap(c2dddot),
        qdot: wrap(qdot),
        qddot: wrap(qddot),
        qdddot: wrap(qdddot),
    }
}

fn chain_parity(
    f: &ScalarField,
    fdot: &ScalarField,
    fddot: &ScalarField,
    fdddot: &ScalarField,
) -> Parity {
    let ps = [f.parity(), fdot.parity(), fddot.parity(), fdddot.parity()];
    if ps.iter().all(|&p| p == Parity::Periodic) {
        Parity::Periodic
    } else if ps.iter().all(|&p| p == Parity::EvenInY) {
        Parity::EvenInY
    } else {
        Parity::MixedInY
    }
}

/// Fit of the Assumption-3.1 constant: a₁ = max over ℓ = 1..5 of
/// ‖p^(ℓ)(ρ)‖_{s+1}/k on the supplied states (s+1 = 4).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct AssumptionAudit {
    pub a1_fit: f64,
    pub worst_ell: usize,
    pub rho_deviation: f64,
}

pub fn assumption_audit(eos: &Eos, f_states: &[&ScalarField]) -> Result<AssumptionAudit> {
    let mut a1 = 0.0f64;
    let mut worst_ell = 1;
    let mut rho_dev = 0.0f64;
    for f in f_states {
        let rho = f.map(f64::exp);
        rho_dev = rho_dev.max(rho.add_scalar(-1.0).sobolev_norm(SobolevIndex(4.0), None).value);
        for ell in 1..=5 {
            let comp = rho.map(|r| eos.dp(ell, r));
            let ratio = comp.sobolev_norm(SobolevIndex(4.0), None).value / eos.k;
            if ratio > a1 {
                a1 = ratio;
                worst_ell = ell;
            }
            if !ratio.is_finite() {
                return Err(Error::Unphysical(format!(
                    "derivative bound check failed at ℓ = {ell}"
                )));
            }
        }
    }
    Ok(AssumptionAudit { a1_fit: a1, worst_ell, rho_deviation: rho_dev })
}
