//! Scratch probe: marker stage-velocity variants.
//! v2: midpoint interpolated from full-step samples (4-pt Lagrange)
//! v3: marker step 2dt with exact full-step samples as stages

use lowmach::domain::{random_scalar, random_solenoidal, DomainSpec, Parity, ScalarField};
use lowmach::eos::Eos;
use lowmach::lagrange::{marker_labels, vector_from_marker_values, FlowMap};
use lowmach::rng::Rng;
use lowmach::solvers::{rk4_compressible_step, CompressibleState};
use lowmach::VectorField;

fn advance_markers(
    spec: DomainSpec,
    labels: &[(f64, f64)],
    flow: &FlowMap,
    stages: [&VectorField; 3],
    dt: f64,
    t_new: f64,
) -> FlowMap {
    let n = labels.len();
    let pos0 = flow.positions();
    let vel = |u: &VectorField, pts: &[(f64, f64)]| (u.x.eval_at(pts), u.y.eval_at(pts));
    let shift = |p: &[(f64, f64)], kx: &[f64], ky: &[f64], h: f64| {
        p.iter()
            .zip(kx.iter().zip(ky.iter()))
            .map(|(&(x, y), (&a, &b))| (x + h * a, y + h * b))
            .collect::<Vec<_>>()
    };
    let (k1x, k1y) = vel(stages[0], &pos0);
    let p2 = shift(&pos0, &k1x, &k1y, dt / 2.0);
    let (k2x, k2y) = vel(stages[1], &p2);
    let p3 = shift(&pos0, &k2x, &k2y, dt / 2.0);
    let (k3x, k3y) = vel(stages[1], &p3);
    let p4 = shift(&pos0, &k3x, &k3y, dt);
    let (k4x, k4y) = vel(stages[2], &p4);
    let mut dx = Vec::with_capacity(n);
    let mut dy = Vec::with_capacity(n);
    for i in 0..n {
        dx.push(pos0[i].0 - labels[i].0 + dt / 6.0 * (k1x[i] + 2.0 * (k2x[i] + k3x[i]) + k4x[i]));
        dy.push(pos0[i].1 - labels[i].1 + dt / 6.0 * (k1y[i] + 2.0 * (k2y[i] + k3y[i]) + k4y[i]));
    }
    FlowMap::from_parts(
        vector_from_marker_values(spec, &dx, &dy),
        VectorField::zeros_velocity(spec),
        t_new,
    )
}

fn lagrange4(samples: &[VectorField], s: f64) -> VectorField {
    // interpolate at fractional index s using up to the last 4 samples
    let n = samples.len();
    let st = n.min(4);
    let base = ((s.floor() as isize) - 1).clamp(0, n as isize - st as isize) as usize;
    let mut acc: Option<VectorField> = None;
    for i in 0..st {
        let ti = (base + i) as f64;
        let mut w = 1.0;
        for j in 0..st {
            if j != i {
                w *= (s - (base + j) as f64) / (ti - (base + j) as f64);
            }
        }
        let term = VectorField::new(samples[base + i].x.scale(w), samples[base + i].y.scale(w));
        acc = Some(match acc {
            None => term,
            Some(a) => &a + &term,
        });
    }
    acc.unwrap()
}

fn main() {
    let spec = DomainSpec::torus(64, 64, 1.0);
    let k = 1.0e3;
    let eos = Eos::gamma_law(k, 1.4);
    let mut rng = Rng::new(404);
    let u0 = random_solenoidal(spec, 2, &mut rng);
    let u0 = u0.scale(0.2 / u0.max_abs());
    let f0 = random_scalar(spec, Parity::Periodic, 2, &mut rng).scale(0.3 / k);
    let labels = marker_labels(&spec);
    let n = labels.len();

    let check = |flow: &FlowMap, state: &CompressibleState, f0: &ScalarField| -> f64 {
        let jdet = flow.jacobian().map(f64::ln);
        let fvals = state.f.eval_at(&flow.positions());
        let mut err = 0.0f64;
        for i in 0..n {
            let lhs = fvals[i] - f0.eval_at_one(labels[i].0, labels[i].1);
            err = err.max((lhs + jdet.values()[(i / spec.nx, i % spec.nx)]).abs());
        }
        err
    };

    // v2: interpolated midpoints
    {
        let mut state = CompressibleState::new(u0.clone(), f0.clone(), 0.0).unwrap();
        let dt = state.cfl_dt(&eos, 0.4).unwrap();
        let mut samples = vec![state.u.clone()];
        let mut flow = FlowMap::identity(&u0);
        for step in 0..200 {
            state = rk4_compressible_step(&state, &eos, dt).unwrap();
            samples.push(state.u.clone());
            let s_mid = step as f64 + 0.5;
            let mid = lagrange4(&samples, s_mid);
            let a = samples[step].clone();
            let c = samples[step + 1].clone();
            flow = advance_markers(spec, &labels, &flow, [&a, &mid, &c], dt, state.t);
            if (step + 1) % 100 == 0 {
                println!("v2 (interp mid): t = {:.4}, defect {:.3e}", state.t, check(&flow, &state, &f0));
            }
        }
    }

    // v3: marker step 2dt from exact full-step samples
    {
        let mut state = CompressibleState::new(u0.clone(), f0.clone(), 0.0).unwrap();
        let dt = state.cfl_dt(&eos, 0.4).unwrap();
        let mut flow = FlowMap::identity(&u0);
        for step in 0..100 {
            let a = state.u.clone();
            state = rk4_compressible_step(&state, &eos, dt).unwrap();
            let b = state.u.clone();
            state = rk4_compressible_step(&state, &eos, dt).unwrap();
            let c = state.u.clone();
            flow = advance_markers(spec, &labels, &flow, [&a, &b, &c], 2.0 * dt, state.t);
            if (step + 1) % 50 == 0 {
                println!("v3 (2dt strides): t = {:.4}, defect {:.3e}", state.t, check(&flow, &state, &f0));
            }
        }
    }
}
