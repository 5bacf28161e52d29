//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! with the measured quantities. Run with
//! `cargo test --test acceptance -- --nocapture` to see every line.

use lowmach::analysis::{cascade, compat_project, compat_residuals, derivative_probe};
use lowmach::domain::{
    random_scalar, random_solenoidal, random_velocity, DomainSpec, Parity, ScalarField,
    VectorField, TWO_PI,
};
use lowmach::elliptic::{helmholtz_decompose, measure_inverse_norm, LOperator};
use lowmach::eos::{eos_eval, Eos};
use lowmach::lagrange::{
    approx_sequence, density_from_jacobian, psi_t_observed, PsiOptions, SequenceOptions,
};
use lowmach::rng::Rng;
use lowmach::solvers::{rk4_compressible_step, rk4_euler_step, CompressibleState, EulerState};
use lowmach::sweep::{fit_slope, run_sweep, Config, SweepResult};
use lowmach::Trace1D;
use std::sync::OnceLock;
use std::time::Instant;

fn pass(criterion: &str, detail: String) {
    println!("ACCEPTANCE {criterion}: PASS — {detail}");
}

/// Criterion 1: calculus identities (δ∇ = −Δ, adjointness) on 100 random
/// band-limited fields to 1e-10 relative, under 10 s.
#[test]
fn criterion_01_spectral_kernel_exactness() {
    let start = Instant::now();
    let specs = [DomainSpec::torus(64, 64, 1.0), DomainSpec::channel(64, 32, 1.0)];
    let mut rng = Rng::new(101);
    let mut worst_delta_grad = 0.0f64;
    let mut worst_adjoint = 0.0f64;
    for trial in 0..100 {
        let spec = specs[trial % 2];
        let (parity, g_parity) = if spec.is_channel() {
            (Parity::EvenInY, Parity::EvenInY)
        } else {
            (Parity::Periodic, Parity::Periodic)
        };
        let f = random_scalar(spec, parity, 5, &mut rng);
        let lhs = f.grad().delta();
        let rhs = f.laplacian().scale(-1.0);
        worst_delta_grad =
            worst_delta_grad.max((&lhs - &rhs).l2() / rhs.l2().max(1e-300));
        let g = random_scalar(spec, g_parity, 5, &mut rng);
        let u = random_velocity(spec, 5, &mut rng);
        let a = g.mul_raw(&u.delta()).integral();
        let b = g.grad().inner(&u);
        worst_adjoint =
            worst_adjoint.max((a - b).abs() / (g.hs(1.0) * u.hs(1.0)).max(1e-300));
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(worst_delta_grad <= 1e-10, "δ∇ vs −Δ relative error {worst_delta_grad:.3e}");
    assert!(worst_adjoint <= 1e-10, "adjointness relative error {worst_adjoint:.3e}");
    assert!(elapsed < 10.0, "runtime {elapsed:.1}s exceeds 10s");
    pass(
        "1 (spectral kernel exactness)",
        format!(
            "δ∇=−Δ err {worst_delta_grad:.2e}, adjointness err {worst_adjoint:.2e}, {elapsed:.1}s"
        ),
    );
}

/// Criterion 2: P² = P, Q² = Q, PQ = 0, Q(∇g) = ∇g to 1e-10 on torus and
/// channel.
#[test]
fn criterion_02_projection_algebra() {
    let mut rng = Rng::new(202);
    let mut worst = 0.0f64;
    for spec in [DomainSpec::torus(64, 64, 1.0), DomainSpec::channel(64, 32, 1.0)] {
        for _ in 0..25 {
            let w = random_velocity(spec, 5, &mut rng);
            let scale = w.l2().max(1e-300);
            let (p, q) = helmholtz_decompose(&w).unwrap();
            let (pp, pq) = helmholtz_decompose(&p).unwrap();
            let (qp, qq) = helmholtz_decompose(&q).unwrap();
            worst = worst.max((&pp - &p).l2() / scale);
            worst = worst.max(pq.l2() / scale);
            worst = worst.max(qp.l2() / scale);
            worst = worst.max((&qq - &q).l2() / scale);
            let parity = if spec.is_channel() { Parity::EvenInY } else { Parity::Periodic };
            let g = random_scalar(spec, parity, 5, &mut rng);
            let gradg = g.grad();
            let gscale = gradg.l2().max(1e-300);
            let (pg, qg) = helmholtz_decompose(&gradg).unwrap();
            worst = worst.max((&qg - &gradg).l2() / gscale);
            worst = worst.max(pg.l2() / gscale);
        }
    }
    assert!(worst <= 1e-10, "projection algebra worst relative defect {worst:.3e}");
    pass("2 (projection algebra)", format!("worst relative defect {worst:.2e}"));
}

/// Criterion 3: Taylor–Green stationarity ‖v(t) − v₀‖₀ ≤ 1e-6 and kinetic
/// energy drift ≤ 1e-6 relative on t ∈ [0,1] at N = 64, under a minute.
#[test]
fn criterion_03_incompressible_taylor_green() {
    let start = Instant::now();
    let spec = DomainSpec::torus(64, 64, TWO_PI);
    let v0 = VectorField::new(
        ScalarField::from_fn(spec, Parity::Periodic, |x, y| x.sin() * y.cos()),
        ScalarField::from_fn(spec, Parity::Periodic, |x, y| -(x.cos() * y.sin())),
    );
    let mut state = EulerState::new(v0.clone(), 0.0).unwrap();
    let e0 = state.kinetic_energy();
    let dt = 0.01;
    let steps = (1.0f64 / dt).round() as usize;
    let mut max_drift = 0.0f64;
    for _ in 0..steps {
        state = rk4_euler_step(&state, dt).unwrap();
        max_drift = max_drift.max(((state.kinetic_energy() - e0) / e0).abs());
    }
    let dev = (&state.v - &v0).l2();
    let elapsed = start.elapsed().as_secs_f64();
    assert!(dev <= 1e-6, "Taylor–Green deviation {dev:.3e}");
    assert!(max_drift <= 1e-6, "energy drift {max_drift:.3e}");
    assert!(elapsed < 60.0, "runtime {elapsed:.1}s exceeds 1 min");
    pass(
        "3 (incompressible Taylor–Green)",
        format!("‖v(1)−v₀‖₀ = {dev:.2e}, energy drift {max_drift:.2e}, {elapsed:.1}s"),
    );
}

/// Criterion 4: density–Jacobian identity ‖f_solver − (f₀ + h)‖₀ ≤ 1e-5
/// throughout a compressible run at k = 10³, N = 64, T = 0.5.
#[test]
fn criterion_04_density_jacobian_identity() {
    use lowmach::lagrange::BackwardMap;
    let spec = DomainSpec::torus(64, 64, 1.0);
    let k = 1.0e3;
    let eos = Eos::gamma_law(k, 1.4);
    let mut rng = Rng::new(404);
    // desk-scale smooth regime: moderate strain keeps the Lagrangian
    // harmonic cascade inside the resolved band over T = 0.5
    let u0 = random_solenoidal(spec, 2, &mut rng);
    let u0 = u0.scale(0.2 / u0.max_abs());
    let f0 = random_scalar(spec, Parity::Periodic, 2, &mut rng).scale(1.0 / k);
    let mut worst = 0.0f64;
    let mut checks = 0usize;
    let mut chunk = 0usize;
    let mut warm: Option<BackwardMap> = None;
    let f0_for_obs = f0.clone();
    psi_t_observed(&u0, &f0, &eos, 0.5, PsiOptions::default(), |state, flow| {
        chunk += 1;
        if chunk % 80 == 0 {
            let bwd = BackwardMap::compute_warm(flow, warm.as_ref()).unwrap();
            let rebuilt = bwd.apply(&(&f0_for_obs - &flow.jacobian().map(f64::ln)));
            worst = worst.max((&rebuilt - &state.f).l2());
            warm = Some(bwd);
            checks += 1;
        }
    })
    .unwrap();
    assert!(checks >= 5, "too few identity checks ({checks})");
    assert!(worst <= 1e-5, "density identity defect {worst:.3e}");
    pass(
        "4 (density–Jacobian identity)",
        format!("sup‖f_solver − (f₀+h)‖₀ = {worst:.2e} over {checks} checks"),
    );
}

fn rate_sweep() -> &'static SweepResult {
    static SWEEP: OnceLock<SweepResult> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let mut cfg = Config::default();
        cfg.set("domain.nx", "64");
        cfg.set("domain.ny", "64");
        cfg.set("domain.lx", "1.0");
        cfg.set("eos.family", "gamma");
        cfg.set("eos.gamma", "1.4");
        cfg.set("solver.t_final", "0.5");
        cfg.set("solver.snapshot_every", "10");
        cfg.set("sweep.k_list", "1e2, 1e3, 1e4");
        cfg.set("sweep.parallel", "false");
        cfg.set("sweep.n_max", "0");
        cfg.set("seed", "505");
        run_sweep(&cfg).expect("rate sweep must complete")
    })
}

/// Criterion 5: fitted slope of sup_t‖u_k − v‖₁ = −0.5 ± 0.15 and of
/// sup_t‖ρ_k − 1‖₀ = −1.0 ± 0.15 over k ∈ {10², 10³, 10⁴}, single-threaded
/// in ≤ 20 min.
#[test]
fn criterion_05_incompressible_limit_rates() {
    let start = Instant::now();
    let result = rate_sweep();
    let elapsed = start.elapsed().as_secs_f64();
    for cell in &result.cells {
        assert!(cell.error.is_none(), "k = {} failed: {:?}", cell.k, cell.error);
    }
    let su = result.slope_u_h1.as_ref().expect("u slope");
    let sr = result.slope_rho_l2.as_ref().expect("rho slope");
    assert!(
        (su.slope + 0.5).abs() <= 0.15,
        "velocity rate {:.3} ± {:.3} outside −0.5 ± 0.15",
        su.slope,
        su.stderr
    );
    assert!(
        (sr.slope + 1.0).abs() <= 0.15,
        "density rate {:.3} ± {:.3} outside −1.0 ± 0.15",
        sr.slope,
        sr.stderr
    );
    assert!(elapsed <= 1200.0, "sweep took {elapsed:.0}s > 20 min");
    pass(
        "5 (incompressible-limit rates)",
        format!(
            "slope(‖u_k−v‖₁) = {:.3}±{:.3}, slope(‖ρ_k−1‖₀) = {:.3}±{:.3}, {elapsed:.0}s",
            su.slope, su.stderr, sr.slope, sr.stderr
        ),
    );
}

/// Criterion 6: k‖f‖₄, √k‖ḟ‖₃, ‖f̈‖₂, ‖f⃛‖₁/√k each vary by < 3× across the
/// sweep at matched times.
#[test]
fn criterion_06_cascade_scalings() {
    let result = rate_sweep();
    let variation = result.cascade_variation.expect("cascade variation");
    let names = ["k‖f‖₄", "√k‖ḟ‖₃", "‖f̈‖₂", "‖f⃛‖₁/√k"];
    for (name, v) in names.iter().zip(variation.iter()) {
        assert!(*v < 3.0, "{name} varies by {v:.2}× (≥ 3×) across the sweep");
    }
    pass(
        "6 (cascade scalings)",
        format!(
            "variation across k: {} = {:.2}×, {} = {:.2}×, {} = {:.2}×, {} = {:.2}×",
            names[0], variation[0], names[1], variation[1], names[2], variation[2], names[3],
            variation[3]
        ),
    );
}

/// Criterion 7: sequence increment slopes ‖u₁−u₀‖₁ ~ k^{−1/2} (±0.2) and
/// ‖u₂−u₁‖₁ ~ k^{−1} (±0.25); strict decrease of ‖u_exact − u_n‖₁ at
/// k = 10³ for n = 0, 1, 2.
#[test]
fn criterion_07_successive_approximations() {
    let spec = DomainSpec::torus(32, 32, 1.0);
    let mut rng = Rng::new(707);
    let u0 = random_solenoidal(spec, 2, &mut rng);
    let u0 = u0.scale(0.6 / u0.max_abs());
    let f0 = ScalarField::zeros(spec, Parity::Periodic);
    let t_final = 0.15;
    let opts = SequenceOptions {
        n_max: 2,
        t_final,
        node_resolution: 0.2,
        min_nodes: 48,
        ..SequenceOptions::default()
    };

    let mut incr1 = Vec::new();
    let mut incr2 = Vec::new();
    let mut seq_k1e3 = None;
    for k in [1.0e2, 4.0e2, 1.6e3, 1.0e3] {
        let eos = Eos::gamma_law(k, 1.4);
        let seq = approx_sequence(&u0, &f0, &eos, opts).unwrap();
        if k == 1.0e3 {
            // extra run used only for the fixed-k comparison below
            seq_k1e3 = Some(seq);
            continue;
        }
        incr1.push((k, seq.eulerian_increment(1, 0, 8).unwrap()));
        incr2.push((k, seq.eulerian_increment(2, 1, 8).unwrap()));
    }
    let fit1 = fit_slope(&incr1).unwrap();
    let fit2 = fit_slope(&incr2).unwrap();
    assert!(
        (fit1.slope + 0.5).abs() <= 0.2,
        "‖u₁−u₀‖₁ slope {:.3} outside −0.5 ± 0.2 ({incr1:?})",
        fit1.slope
    );
    assert!(
        (fit2.slope + 1.0).abs() <= 0.25,
        "‖u₂−u₁‖₁ slope {:.3} outside −1.0 ± 0.25 ({incr2:?})",
        fit2.slope
    );

    // strict decrease against the compressible solution at k = 10³
    let k = 1.0e3;
    let eos = Eos::gamma_law(k, 1.4);
    let seq = seq_k1e3.unwrap();
    let nodes = seq.levels[0].times.len();
    let node_dt = seq.node_dt;
    let mut state = CompressibleState::new(u0.clone(), f0.clone(), 0.0).unwrap();
    let dt_cfl = state.cfl_dt(&eos, 0.4).unwrap();
    let per = (node_dt / dt_cfl).ceil() as usize;
    let dt = node_dt / per as f64;
    let stride = nodes / 8;
    let mut errs = [0.0f64; 3];
    for j in 1..nodes {
        for _ in 0..per {
            state = rk4_compressible_step(&state, &eos, dt).unwrap();
        }
        if j % stride == 0 {
            for (n, err) in errs.iter_mut().enumerate() {
                let un = seq.levels[n].eulerian_velocity(j).unwrap();
                *err = err.max((&un - &state.u).hs(1.0));
            }
        }
    }
    assert!(
        errs[0] > errs[1] && errs[1] > errs[2],
        "‖u_exact − u_n‖₁ not strictly decreasing: {errs:?}"
    );
    pass(
        "7 (successive approximations)",
        format!(
            "slopes: n=1 {:.3}, n=2 {:.3}; errors vs exact at k=10³: {:.2e} > {:.2e} > {:.2e}",
            fit1.slope, fit2.slope, errs[0], errs[1], errs[2]
        ),
    );
}

/// Criterion 8: 1-D solver vs closed form ≤ 1e-6 pre-shock at n = 2048;
/// sensitivity central differences converge at order ≥ 1.9.
#[test]
fn criterion_08_burgers_oracle() {
    use lowmach::oracle1d::{burgers_exact, burgers_numeric, burgers_sensitivity_exact, Profile1D};
    let n = 2048;
    let t = 0.5;
    let u0 = Profile1D::from_fn(n, |x| 0.1 * (TWO_PI * x).sin());
    let exact = burgers_exact(&u0, t).unwrap();
    let numeric = burgers_numeric(&u0, t, 0.5 / n as f64).unwrap();
    let max_err = exact
        .values
        .iter()
        .zip(numeric.values.iter())
        .fold(0.0f64, |m, (&a, &b)| m.max((a - b).abs()));
    assert!(max_err <= 1e-6, "numeric vs exact max error {max_err:.3e}");

    let z0 = Profile1D::from_fn(n, |x| (TWO_PI * x).cos());
    let z = burgers_sensitivity_exact(&u0, &z0, t).unwrap();
    let mut errors = Vec::new();
    for lam in [1e-2, 1e-3, 1e-4] {
        let perturbed = |sign: f64| Profile1D {
            values: u0
                .values
                .iter()
                .zip(z0.values.iter())
                .map(|(&u, &zz)| u + sign * lam * zz)
                .collect(),
        };
        let ep = burgers_exact(&perturbed(1.0), t).unwrap();
        let em = burgers_exact(&perturbed(-1.0), t).unwrap();
        let err = ep
            .values
            .iter()
            .zip(em.values.iter())
            .zip(z.values.iter())
            .fold(0.0f64, |m, ((&a, &b), &zz)| m.max(((a - b) / (2.0 * lam) - zz).abs()));
        errors.push(err);
    }
    let order = (errors[0] / errors[1]).log10().min((errors[1] / errors[2]).log10());
    assert!(order >= 1.9, "sensitivity convergence order {order:.2} < 1.9 ({errors:?})");
    pass(
        "8 (Burgers oracle equivalence)",
        format!("solver vs closed form {max_err:.2e}, sensitivity order {order:.2}"),
    );
}

/// Criterion 9: Richardson sequence ‖D_λ − D_{λ/2}‖ for ψ_t in the discrete
/// H³ pair norm decreases ≥ 3× per halving at k = 10³ (Eulerian values are
/// diagnostic only).
#[test]
fn criterion_09_lagrangian_c1_dependence() {
    let spec = DomainSpec::torus(32, 32, 1.0);
    let k = 1.0e3;
    let eos = Eos::gamma_law(k, 1.4);
    let mut rng = Rng::new(909);
    let u0 = random_solenoidal(spec, 2, &mut rng);
    let u0 = u0.scale(0.5 / u0.max_abs());
    let f0 = random_scalar(spec, Parity::Periodic, 2, &mut rng).scale(1.0 / k);
    let z0 = random_solenoidal(spec, 2, &mut rng);
    let z0 = z0.scale(1.0 / z0.max_abs());
    let h0 = random_scalar(spec, Parity::Periodic, 2, &mut rng).scale(1.0 / k);
    let lambdas = [1e-2, 5e-3, 2.5e-3];
    let report = derivative_probe(
        &u0,
        &f0,
        &z0,
        &h0,
        &eos,
        0.2,
        &lambdas,
        PsiOptions::default(),
    )
    .unwrap();
    let ratio = report.lagrangian_h3[0] / report.lagrangian_h3[1];
    println!(
        "  criterion 9 diagnostics — Lagrangian H³ diffs: {:?}; Eulerian H³ diffs: {:?}",
        report.lagrangian_h3, report.eulerian_h3
    );
    assert!(
        ratio >= 3.0,
        "Richardson decrease {ratio:.2}× < 3× (H³ differences {:?})",
        report.lagrangian_h3
    );
    pass(
        "9 (Lagrangian C¹ dependence)",
        format!(
            "‖D_λ − D_λ/2‖₃ sequence {:?}, per-halving decrease {ratio:.2}×",
            report.lagrangian_h3
        ),
    );
}

/// Criterion 10: on channel data violating φ₁–φ₃ the projected residuals
/// fall below 1e-8·scale, and the per-iteration contraction at k = 10⁴ is
/// ≥ 5× tighter than at k = 10³.
#[test]
fn criterion_10_compatibility_projection() {
    let spec = DomainSpec::channel(32, 32, 1.0);
    let mut contractions = Vec::new();
    for k in [1.0e3, 1.0e4] {
        let eos = Eos::gamma_law(k, 1.4);
        let mut rng = Rng::new(1010);
        let u_base = random_solenoidal(spec, 2, &mut rng);
        let u_base = u_base.scale(0.5 / u_base.max_abs());
        let fe = random_scalar(spec, Parity::EvenInY, 2, &mut rng).scale(1.0 / k);
        let fo = random_scalar(spec, Parity::OddInY, 2, &mut rng).scale(0.5 / k);
        let f0 = ScalarField::mix(&fe, &fo);
        let before = compat_residuals(&u_base, &f0, &eos).unwrap();
        assert!(before.max_residual() > 1e-4, "violation too small to be meaningful");
        let proj = compat_project(&u_base, &f0, &eos, 25).unwrap();
        let scale = 1.0 + u_base.hs(3.0).powi(2) + k * f0.hs(4.0);
        assert!(
            proj.report.max_residual() <= 1e-8 * scale,
            "k = {k}: projected residual {:.3e} > 1e-8·scale ({:.3e})",
            proj.report.max_residual(),
            1e-8 * scale
        );
        contractions.push(proj.contraction);
    }
    let tightening = contractions[0] / contractions[1];
    assert!(
        tightening >= 5.0,
        "contraction at k=10⁴ only {tightening:.1}× tighter (ratios {contractions:?})"
    );
    pass(
        "10 (compatibility projection)",
        format!(
            "residuals below 1e-8·scale; contraction {:.2e} (k=10³) vs {:.2e} (k=10⁴), {tightening:.1}× tighter",
            contractions[0], contractions[1]
        ),
    );
}

/// Criterion 11: measured ‖L⁻¹‖ slope vs k = −1 ± 0.1 and ‖G_L‖ variation
/// < 2× across the sweep.
#[test]
fn criterion_11_l_operator_spectra() {
    // interior inverse on the torus with solver-like c² states
    let spec = DomainSpec::torus(32, 32, 1.0);
    let mut inverse_norms = Vec::new();
    for k in [1.0e2, 1.0e3, 1.0e4] {
        let eos = Eos::gamma_law(k, 1.4);
        let mut rng = Rng::new(1111);
        let f = random_scalar(spec, Parity::Periodic, 3, &mut rng).scale(1.0 / k);
        let c2 = eos_eval(&eos, &f).unwrap().c2;
        let op = LOperator::new(c2, k).unwrap();
        let norm = measure_inverse_norm(&op, 4, 8, &mut rng).unwrap();
        inverse_norms.push((k, norm));
    }
    let fit = fit_slope(&inverse_norms).unwrap();
    assert!(
        (fit.slope + 1.0).abs() <= 0.1,
        "‖L⁻¹‖ slope {:.3} outside −1 ± 0.1 ({inverse_norms:?})",
        fit.slope
    );

    // boundary solver on the channel with the same family of states
    let chan = DomainSpec::channel(32, 32, 1.0);
    let data = Trace1D::from_values(
        chan.lx,
        ndarray::Array1::from_shape_fn(chan.nx, |i| (TWO_PI * chan.x(i)).cos()),
    );
    let zero = Trace1D::from_values(chan.lx, ndarray::Array1::zeros(chan.nx));
    let mut gl_norms = Vec::new();
    for k in [1.0e2, 1.0e3, 1.0e4] {
        let eos = Eos::gamma_law(k, 1.4);
        let mut rng = Rng::new(1212);
        let f = random_scalar(chan, Parity::EvenInY, 3, &mut rng).scale(1.0 / k);
        let c2 = eos_eval(&eos, &f).unwrap().c2;
        let op = LOperator::new(c2, k).unwrap();
        let sol = op.gl_solve(&zero, &data).unwrap();
        gl_norms.push(sol.h1_norm());
    }
    let spread = gl_norms.iter().cloned().fold(0.0f64, f64::max)
        / gl_norms.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread < 2.0, "‖G_L‖ varies by {spread:.2}× across the sweep ({gl_norms:?})");
    pass(
        "11 (L-operator spectra)",
        format!("‖L⁻¹‖ slope {:.3} ± {:.3}, ‖G_L‖ spread {spread:.2}×", fit.slope, fit.stderr),
    );
}
