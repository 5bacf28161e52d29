//! Experiment harness: configuration, solver runs, k-sweeps, slope fits,
//! and report emission.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 acceptance-threshold failure in `--check` mode.

use clap::{Parser, Subcommand};
use lowmach::analysis::{compat_project, compat_residuals, derivative_probe, BaseTape};
use lowmach::domain::{random_scalar, random_solenoidal, Parity, ScalarField, VectorField};
use lowmach::error::Error;
use lowmach::io;
use lowmach::lagrange::{approx_sequence, PsiOptions, SequenceOptions};
use lowmach::oracle1d::{burgers_exact, burgers_numeric, burgers_sensitivity_exact, Profile1D};
use lowmach::rng::Rng;
use lowmach::solvers::{
    rk4_compressible_step, rk4_euler_step, timeseries_row, CompressibleState, EulerState,
    TimeSeriesRow, DEFAULT_CFL,
};
use lowmach::sweep::{fit_slope, run_sweep, write_outputs, Config};
use lowmach::{analysis, SensitivityState};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "lowmach", version, about = "pseudo-spectral low-Mach laboratory")]
struct Cli {
    /// flat key=value configuration file
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// override a configuration key (repeatable): -s key=value
    #[arg(short = 's', long = "set", global = true)]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Project channel initial data onto the compatible set
    ProjectIc,
    /// Integrate the incompressible equations
    RunIncompressible,
    /// Integrate the compressible equations
    RunCompressible,
    /// Run the k-sweep and fit the limit rates
    SweepK {
        /// verify the fitted slopes against the expected rates
        #[arg(long)]
        check: bool,
    },
    /// Build the successive-approximation sequence at the configured k
    ApproxSeq,
    /// Linearized solve vs nonlinear difference quotients, plus ψ_t probes
    Sensitivity,
    /// 1-D Burgers closed form vs the pseudo-spectral solver
    BurgersOracle,
    /// Compressible run emitting the cascade diagnostic table
    Diagnostics,
    /// Fit a log-log slope to a two-column table
    Fit { file: PathBuf },
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Io(_) => 2,
                _ => 3,
            }
        }
    };
    std::process::exit(code);
}

fn load_config(cli: &Cli) -> Result<Config, Error> {
    let mut config = match &cli.config {
        Some(path) => Config::parse(&std::fs::read_to_string(path)?)?,
        None => Config::default(),
    };
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got `{kv}`")))?;
        config.set(k.trim(), v.trim());
    }
    Ok(config)
}

fn out_dir(config: &Config) -> Result<PathBuf, Error> {
    let dir = PathBuf::from(config.get("output.dir").unwrap_or("out"));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn run(cli: Cli) -> Result<i32, Error> {
    let config = load_config(&cli)?;
    match cli.command {
        Command::ProjectIc => project_ic(&config),
        Command::RunIncompressible => run_incompressible(&config),
        Command::RunCompressible => run_compressible(&config),
        Command::SweepK { check } => sweep_k(&config, check),
        Command::ApproxSeq => approx_seq(&config),
        Command::Sensitivity => sensitivity(&config),
        Command::BurgersOracle => burgers_oracle(&config),
        Command::Diagnostics => diagnostics(&config),
        Command::Fit { file } => fit(&file),
    }
}

/// Violating channel data from the configured seed: mixed-parity log-density
/// plus a gradient with nonzero wall flux.
fn violating_data(config: &Config) -> Result<(VectorField, ScalarField), Error> {
    let spec = config.domain()?;
    if !spec.is_channel() {
        return Err(Error::Config("project-ic needs domain.geometry = channel".into()));
    }
    let eos = config.eos()?;
    let mut rng = Rng::new(config.seed()?);
    let violation = config.f64_or("ic.violation", 0.3)?;
    let u_base = random_solenoidal(spec, 2, &mut rng);
    let u_base = u_base.scale(0.5 / u_base.max_abs());
    let fe = random_scalar(spec, Parity::EvenInY, 2, &mut rng).scale(1.0 / eos.k);
    let fo = random_scalar(spec, Parity::OddInY, 2, &mut rng).scale(violation / eos.k);
    Ok((u_base, ScalarField::mix(&fe, &fo)))
}

fn project_ic(config: &Config) -> Result<i32, Error> {
    let eos = config.eos()?;
    let dir = out_dir(config)?;
    let (u0, f0) = violating_data(config)?;
    let before = compat_residuals(&u0, &f0, &eos)?;
    let max_iter = config.usize_or("ic.max_iter", 20)?;
    let proj = compat_project(&u0, &f0, &eos, max_iter)?;
    println!(
        "compat projection: max residual {:.3e} -> {:.3e} in {} rounds (contraction {:.3e})",
        before.max_residual(),
        proj.report.max_residual(),
        proj.report.history.len() - 1,
        proj.contraction
    );
    io::write_json(&dir.join("compat_history.json"), &proj.report)?;
    io::write_snapshot(&dir.join("f0_projected.bin"), &proj.f, "f0_projected", 0.0)?;
    io::write_snapshot(&dir.join("u0x_projected.bin"), &proj.u.x, "u0x_projected", 0.0)?;
    io::write_snapshot(&dir.join("u0y_projected.bin"), &proj.u.y, "u0y_projected", 0.0)?;
    Ok(0)
}

fn initial_velocity(config: &Config) -> Result<VectorField, Error> {
    let spec = config.domain()?;
    let mut rng = Rng::new(config.seed()?);
    let amplitude = config.f64_or("data.amplitude", 0.5)?;
    let v = random_solenoidal(spec, 2, &mut rng);
    Ok(v.scale(amplitude / v.max_abs()))
}

fn run_incompressible(config: &Config) -> Result<i32, Error> {
    let dir = out_dir(config)?;
    let t_final = config.f64_or("solver.t_final", 1.0)?;
    let samples = config.usize_or("solver.snapshot_every", 10)?;
    let mut state = EulerState::new(initial_velocity(config)?, 0.0)?;
    let dt_cfl = state.cfl_dt(config.f64_or("solver.dt_safety", DEFAULT_CFL)?);
    let per = ((t_final / samples as f64) / dt_cfl).ceil().max(1.0) as usize;
    let dt = t_final / (samples * per) as f64;
    let area = state.v.spec().area();
    let mut rows: Vec<TimeSeriesRow> = vec![TimeSeriesRow {
        t: 0.0,
        kinetic: state.kinetic_energy(),
        mass: area,
        f_h4: 0.0,
        fdot_h3: 0.0,
        div_l2: state.v.div().l2(),
        dt,
    }];
    for _ in 0..samples {
        for _ in 0..per {
            state = rk4_euler_step(&state, dt)?;
        }
        rows.push(TimeSeriesRow {
            t: state.t,
            kinetic: state.kinetic_energy(),
            mass: area,
            f_h4: 0.0,
            fdot_h3: 0.0,
            div_l2: state.v.div().l2(),
            dt,
        });
    }
    io::write_timeseries(&dir.join("timeseries.csv"), &rows)?;
    io::write_snapshot(&dir.join("v_x.bin"), &state.v.x, "v_x", state.t)?;
    io::write_snapshot(&dir.join("v_y.bin"), &state.v.y, "v_y", state.t)?;
    io::write_csv(&dir.join("v_x.csv"), &state.v.x)?;
    println!("incompressible run to t = {:.4}: kinetic energy {:.6e}", state.t, rows.last().unwrap().kinetic);
    Ok(0)
}

fn compressible_initial(config: &Config) -> Result<(CompressibleState, lowmach::Eos), Error> {
    let eos = config.eos()?;
    let u0 = initial_velocity(config)?;
    let spec = *u0.spec();
    let parity = if spec.is_channel() { Parity::EvenInY } else { Parity::Periodic };
    let mut rng = Rng::new(config.seed()?.wrapping_add(1));
    let f0 = random_scalar(spec, parity, 2, &mut rng).scale(1.0 / eos.k);
    Ok((CompressibleState::new(u0, f0, 0.0)?, eos))
}

fn run_compressible(config: &Config) -> Result<i32, Error> {
    let dir = out_dir(config)?;
    let t_final = config.f64_or("solver.t_final", 0.5)?;
    let samples = config.usize_or("solver.snapshot_every", 10)?;
    let (mut state, eos) = compressible_initial(config)?;
    let dt_cfl = state.cfl_dt(&eos, config.f64_or("solver.dt_safety", DEFAULT_CFL)?)?;
    let per = ((t_final / samples as f64) / dt_cfl).ceil().max(1.0) as usize;
    let dt = t_final / (samples * per) as f64;
    let mut rows = vec![timeseries_row(&state, dt)];
    for s in 0..samples {
        for _ in 0..per {
            state = rk4_compressible_step(&state, &eos, dt)?;
        }
        rows.push(timeseries_row(&state, dt));
        if config.bool_or("output.snapshots", false)? {
            io::write_snapshot(
                &dir.join(format!("f_{s:03}.bin")),
                &state.f,
                "f",
                state.t,
            )?;
        }
    }
    io::write_timeseries(&dir.join("timeseries.csv"), &rows)?;
    io::write_snapshot(&dir.join("u_x.bin"), &state.u.x, "u_x", state.t)?;
    io::write_snapshot(&dir.join("u_y.bin"), &state.u.y, "u_y", state.t)?;
    io::write_snapshot(&dir.join("f.bin"), &state.f, "f", state.t)?;
    println!(
        "compressible run to t = {:.4}: mass drift {:.3e}",
        state.t,
        (rows.last().unwrap().mass - rows[0].mass).abs() / rows[0].mass
    );
    Ok(0)
}

fn sweep_k(config: &Config, check: bool) -> Result<i32, Error> {
    let dir = out_dir(config)?;
    let result = run_sweep(config)?;
    write_outputs(&result, &dir)?;
    for cell in &result.cells {
        match &cell.error {
            None => println!(
                "k = {:>10.1}: sup|u_k - v|_H1 = {:.4e}, sup|rho - 1|_L2 = {:.4e}",
                cell.k, cell.sup_u_err_h1, cell.sup_rho_err_l2
            ),
            Some(e) => println!("k = {:>10.1}: FAILED ({e})", cell.k),
        }
    }
    if let Some(f) = &result.slope_u_h1 {
        println!("slope |u_k - v|_H1 vs k: {:.4} ± {:.4}", f.slope, f.stderr);
    }
    if let Some(f) = &result.slope_rho_l2 {
        println!("slope |rho_k - 1|_L2 vs k: {:.4} ± {:.4}", f.slope, f.stderr);
    }
    if check {
        let ok_u = result
            .slope_u_h1
            .as_ref()
            .map(|f| (f.slope + 0.5).abs() <= 0.15)
            .unwrap_or(false);
        let ok_rho = result
            .slope_rho_l2
            .as_ref()
            .map(|f| (f.slope + 1.0).abs() <= 0.15)
            .unwrap_or(false);
        if !(ok_u && ok_rho) {
            eprintln!("check failed: limit-rate slopes outside tolerance");
            return Ok(4);
        }
        println!("check passed: slopes within tolerance");
    }
    Ok(0)
}

fn approx_seq(config: &Config) -> Result<i32, Error> {
    let dir = out_dir(config)?;
    let eos = config.eos()?;
    let u0 = initial_velocity(config)?;
    let spec = *u0.spec();
    let parity = if spec.is_channel() { Parity::EvenInY } else { Parity::Periodic };
    let f0 = ScalarField::zeros(spec, parity);
    let opts = SequenceOptions {
        n_max: config.usize_or("sweep.n_max", 2)?,
        t_final: config.f64_or("sweep.sequence_t", 0.25)?,
        seed_initial_gradient: config.bool_or("sequence.seed_initial_gradient", false)?,
        ..SequenceOptions::default()
    };
    let seq = approx_sequence(&u0, &f0, &eos, opts)?;
    #[derive(serde::Serialize)]
    struct SeqReport {
        k: f64,
        node_dt: f64,
        lagrangian_increments: Vec<f64>,
        eulerian_increments: Vec<f64>,
        grad_g1_sup_h3: f64,
        picard_iters: Vec<usize>,
    }
    let mut lagr = Vec::new();
    let mut eul = Vec::new();
    for n in 1..seq.levels.len() {
        lagr.push(seq.lagrangian_increment(n, n - 1));
        eul.push(seq.eulerian_increment(n, n - 1, 8)?);
    }
    let report = SeqReport {
        k: seq.k,
        node_dt: seq.node_dt,
        lagrangian_increments: lagr.clone(),
        eulerian_increments: eul.clone(),
        grad_g1_sup_h3: seq.levels.get(1).map(|l| l.grad_g_sup_h3).unwrap_or(0.0),
        picard_iters: seq.levels.iter().map(|l| l.picard_iters).collect(),
    };
    io::write_json(&dir.join("sequence_report.json"), &report)?;
    println!("sequence increments (Lagrangian H3): {lagr:?}");
    println!("sequence increments (Eulerian H1):   {eul:?}");
    Ok(0)
}

fn sensitivity(config: &Config) -> Result<i32, Error> {
    let dir = out_dir(config)?;
    let eos = config.eos()?;
    let (base_state, _) = compressible_initial(config)?;
    let spec = *base_state.u.spec();
    let t_final = config.f64_or("solver.t_final", 0.05)?;
    let dt = 4.0 * base_state.cfl_dt(&eos, DEFAULT_CFL)?;
    let base = BaseTape::record(&base_state, &eos, t_final, dt)?;

    let mut rng = Rng::new(config.seed()?.wrapping_add(17));
    let z0 = random_solenoidal(spec, 2, &mut rng);
    let z0 = z0.scale(1.0 / z0.max_abs());
    let parity = if spec.is_channel() { Parity::EvenInY } else { Parity::Periodic };
    let h0 = random_scalar(spec, parity, 2, &mut rng).scale(1.0 / eos.k);
    let t_grid = base.t_final();
    let lin = lowmach::linearized_solve(
        SensitivityState::new(z0.clone(), h0.clone(), &base_state.f),
        &eos,
        &base,
        t_grid,
        |_| {},
    )?;

    // nonlinear difference quotients at the configured λ values
    let lambdas = config.f64_list("probe.lambdas", &[1e-2, 1e-3, 1e-4])?;
    #[derive(serde::Serialize)]
    struct QuotientRow {
        lambda: f64,
        err_z_h2: f64,
        err_h_h2: f64,
    }
    let mut rows = Vec::new();
    for &lam in &lambdas {
        let up = &base_state.u + &z0.scale(lam);
        let fp = &base_state.f + &h0.scale(lam);
        let mut s = CompressibleState::new(up, fp, 0.0)?;
        let steps = (t_grid / (dt / 2.0)).round() as usize;
        for _ in 0..steps {
            s = rk4_compressible_step(&s, &eos, dt / 2.0)?;
        }
        let qz = (&s.u - &base.u[base.u.len() - 1]).scale(1.0 / lam);
        let qh = (&s.f - &base.f[base.f.len() - 1]).scale(1.0 / lam);
        rows.push(QuotientRow {
            lambda: lam,
            err_z_h2: (&qz - &lin.z).hs(2.0),
            err_h_h2: (&qh - &lin.h).hs(2.0),
        });
    }
    io::write_json(&dir.join("quotients.json"), &rows)?;
    for r in &rows {
        println!(
            "lambda = {:.1e}: |quotient - z|_H2 = {:.4e}, |quotient - h|_H2 = {:.4e}",
            r.lambda, r.err_z_h2, r.err_h_h2
        );
    }

    // ψ_t derivative probe (Lagrangian vs Eulerian pictures)
    let probe = derivative_probe(
        &base_state.u,
        &base_state.f,
        &z0,
        &h0,
        &eos,
        t_grid,
        &lambdas,
        PsiOptions::default(),
    )?;
    io::write_json(&dir.join("probe_report.json"), &probe)?;
    Ok(0)
}

fn burgers_oracle(config: &Config) -> Result<i32, Error> {
    let dir = out_dir(config)?;
    let n = config.usize_or("burgers.n", 2048)?;
    let t = config.f64_or("burgers.t", 0.5)?;
    let lam = config.f64_or("burgers.lambda", 1e-3)?;
    let u0 = Profile1D::from_fn(n, |x| 0.1 * (lowmach::domain::TWO_PI * x).sin());
    let z0 = Profile1D::from_fn(n, |x| (lowmach::domain::TWO_PI * x).cos());
    let exact = burgers_exact(&u0, t)?;
    let numeric = burgers_numeric(&u0, t, 0.5 / n as f64)?;
    let z_exact = burgers_sensitivity_exact(&u0, &z0, t)?;
    let up = Profile1D {
        values: u0.values.iter().zip(z0.values.iter()).map(|(&u, &z)| u + lam * z).collect(),
    };
    let um = Profile1D {
        values: u0.values.iter().zip(z0.values.iter()).map(|(&u, &z)| u - lam * z).collect(),
    };
    let ep = burgers_exact(&up, t)?;
    let em = burgers_exact(&um, t)?;
    let mut w = String::from("x,u_exact,u_numeric,z_exact,z_fd\n");
    let mut max_u_err = 0.0f64;
    let mut max_z_err = 0.0f64;
    for i in 0..n {
        let x = i as f64 / n as f64;
        let z_fd = (ep.values[i] - em.values[i]) / (2.0 * lam);
        max_u_err = max_u_err.max((exact.values[i] - numeric.values[i]).abs());
        max_z_err = max_z_err.max((z_fd - z_exact.values[i]).abs());
        w.push_str(&format!(
            "{x:.17e},{:.17e},{:.17e},{:.17e},{z_fd:.17e}\n",
            exact.values[i], numeric.values[i], z_exact.values[i]
        ));
    }
    std::fs::write(dir.join("burgers.csv"), w)?;
    println!("burgers oracle: max |u_exact - u_numeric| = {max_u_err:.4e}, max |z_fd - z_exact| = {max_z_err:.4e}");
    Ok(0)
}

fn diagnostics(config: &Config) -> Result<i32, Error> {
    let dir = out_dir(config)?;
    let t_final = config.f64_or("solver.t_final", 0.25)?;
    let samples = config.usize_or("solver.snapshot_every", 10)?;
    let (mut state, eos) = compressible_initial(config)?;
    let dt_cfl = state.cfl_dt(&eos, config.f64_or("solver.dt_safety", DEFAULT_CFL)?)?;
    let per = ((t_final / samples as f64) / dt_cfl).ceil().max(1.0) as usize;
    let dt = t_final / (samples * per) as f64;
    let mut table = String::from("t,f_h4,fdot_h3,fddot_h2,fdddot_h1,E,E1,wall_P\n");
    let push = |table: &mut String, rep: &lowmach::CascadeReport| {
        table.push_str(&format!(
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
            rep.t, rep.f_h4, rep.fdot_h3, rep.fddot_h2, rep.fdddot_h1, rep.e, rep.e1, rep.wall_p
        ));
    };
    push(&mut table, &analysis::cascade(&state, &eos)?.report);
    for _ in 0..samples {
        for _ in 0..per {
            state = rk4_compressible_step(&state, &eos, dt)?;
        }
        push(&mut table, &analysis::cascade(&state, &eos)?.report);
    }
    std::fs::write(dir.join("cascade.csv"), &table)?;
    println!("cascade table written to {}", dir.join("cascade.csv").display());
    Ok(0)
}

fn fit(file: &Path) -> Result<i32, Error> {
    let text = std::fs::read_to_string(file)?;
    let mut pts = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split([',', ' ', '\t']).filter(|s| !s.is_empty()).collect();
        if fields.len() < 2 {
            continue;
        }
        let x = fields[0].parse::<f64>();
        let y = fields[1].parse::<f64>();
        if let (Ok(x), Ok(y)) = (x, y) {
            pts.push((x, y));
        }
    }
    let fit = fit_slope(&pts)?;
    println!(
        "{}",
        serde_json::json!({
            "points": pts.len(),
            "slope": fit.slope,
            "intercept": fit.intercept,
            "stderr": fit.stderr,
        })
    );
    Ok(0)
}
