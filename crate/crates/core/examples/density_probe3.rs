//! Scratch probe: determinant-based J vs an independent volume ODE
//! J̇ = J·(div u)∘ζ advanced with the same stage data.

use lowmach::domain::{random_scalar, random_solenoidal, DomainSpec, Parity, ScalarField};
use lowmach::eos::Eos;
use lowmach::lagrange::{marker_labels, FlowMap};
use lowmach::rng::Rng;
use lowmach::solvers::{rk4_compressible_step, CompressibleState, SteadyVelocity};

fn main() {
    let spec = DomainSpec::torus(64, 64, 1.0);
    let k = 1.0e3;
    let eos = Eos::gamma_law(k, 1.4);
    let mut rng = Rng::new(404);
    let u0 = random_solenoidal(spec, 2, &mut rng);
    let u0 = u0.scale(0.2 / u0.max_abs());
    let f0 = random_scalar(spec, Parity::Periodic, 2, &mut rng).scale(0.3 / k);
    let mut state = CompressibleState::new(u0.clone(), f0.clone(), 0.0).unwrap();
    let dt = state.cfl_dt(&eos, 0.4).unwrap();

    let labels = marker_labels(&spec);
    let n = labels.len();
    let mut flow = FlowMap::identity(&u0);
    let mut logv = vec![0.0f64; n]; // ODE volume per marker

    let steps = 200usize;
    for step in 0..steps {
        // stage fields for the flow/volume RK4 over [t, t+dt]
        let u_a = state.u.clone();
        let div_a = u_a.div();
        let mid = rk4_compressible_step(&state, &eos, dt / 2.0).unwrap();
        let u_b = mid.u.clone();
        let div_b = u_b.div();
        state = rk4_compressible_step(&state, &eos, dt).unwrap();
        let u_c = state.u.clone();
        let div_c = u_c.div();

        // positions at stage points (shared between flow and volume)
        let pos0 = flow.positions();
        let eval = |f: &ScalarField, pts: &[(f64, f64)]| f.eval_at(pts);
        let vel = |u: &lowmach::VectorField, pts: &[(f64, f64)]| {
            (u.x.eval_at(pts), u.y.eval_at(pts))
        };
        let (k1x, k1y) = vel(&u_a, &pos0);
        let shift = |p: &[(f64, f64)], kx: &[f64], ky: &[f64], h: f64| {
            p.iter()
                .zip(kx.iter().zip(ky.iter()))
                .map(|(&(x, y), (&a, &b))| (x + h * a, y + h * b))
                .collect::<Vec<_>>()
        };
        let p2 = shift(&pos0, &k1x, &k1y, dt / 2.0);
        let (k2x, k2y) = vel(&u_b, &p2);
        let p3 = shift(&pos0, &k2x, &k2y, dt / 2.0);
        let (k3x, k3y) = vel(&u_b, &p3);
        let p4 = shift(&pos0, &k3x, &k3y, dt);
        let (k4x, k4y) = vel(&u_c, &p4);

        // volume ODE stages: d(log v)/dt = div u at the marker position
        let g1 = eval(&div_a, &pos0);
        let g2 = eval(&div_b, &p2);
        let g3 = eval(&div_b, &p3);
        let g4 = eval(&div_c, &p4);
        for i in 0..n {
            logv[i] += dt / 6.0 * (g1[i] + 2.0 * (g2[i] + g3[i]) + g4[i]);
        }

        // flow advance with the same stage data (steady per-stage fields)
        let _ = SteadyVelocity(u_a); // silence: we advance manually below
        let mut dx: Vec<f64> = Vec::with_capacity(n);
        let mut dy: Vec<f64> = Vec::with_capacity(n);
        for i in 0..n {
            dx.push(
                pos0[i].0 - labels[i].0
                    + dt / 6.0 * (k1x[i] + 2.0 * (k2x[i] + k3x[i]) + k4x[i]),
            );
            dy.push(
                pos0[i].1 - labels[i].1
                    + dt / 6.0 * (k1y[i] + 2.0 * (k2y[i] + k3y[i]) + k4y[i]),
            );
        }
        flow = FlowMap::from_parts(
            lowmach::lagrange::vector_from_marker_values(spec, &dx, &dy),
            lowmach::VectorField::zeros_velocity(spec),
            state.t,
        );

        if (step + 1) % 50 == 0 {
            // compare both J's against the solver f along markers
            let jdet = flow.jacobian().map(f64::ln);
            let fvals = state.f.eval_at(&flow.positions());
            let f0vals: Vec<f64> = {
                let mut v = Vec::with_capacity(n);
                for &(x, y) in &labels {
                    v.push(f0.eval_at_one(x, y));
                }
                v
            };
            let mut err_det = 0.0f64;
            let mut err_ode = 0.0f64;
            for i in 0..n {
                let lhs = fvals[i] - f0vals[i];
                let jd = jdet.values()[(i / spec.nx, i % spec.nx)];
                err_det = err_det.max((lhs + jd).abs());
                err_ode = err_ode.max((lhs + logv[i]).abs());
            }
            println!(
                "t = {:.4}: |f−f0 + logJ_det|∞ = {err_det:.3e}, |f−f0 + logJ_ode|∞ = {err_ode:.3e}",
                state.t
            );
        }
    }
}
