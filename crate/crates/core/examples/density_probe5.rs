//! Scratch probe: psi_t's flow vs a manually advanced flow, same data.

use lowmach::domain::{random_scalar, random_solenoidal, DomainSpec, Parity};
use lowmach::eos::Eos;
use lowmach::lagrange::{marker_labels, psi_t_observed, vector_from_marker_values, FlowMap, PsiOptions};
use lowmach::rng::Rng;
use lowmach::solvers::{rk4_compressible_step, CompressibleState};
use lowmach::VectorField;

fn main() {
    let spec = DomainSpec::torus(64, 64, 1.0);
    let k = 1.0e3;
    let eos = Eos::gamma_law(k, 1.4);
    let mut rng = Rng::new(404);
    let u0 = random_solenoidal(spec, 2, &mut rng);
    let u0 = u0.scale(0.2 / u0.max_abs());
    let f0 = random_scalar(spec, Parity::Periodic, 2, &mut rng).scale(0.3 / k);

    // --- psi_t path: capture the flow after every chunk ---
    let opts = PsiOptions { marker_substep: 2, ..PsiOptions::default() };
    let t_final = 0.01;
    let mut flows: Vec<FlowMap> = Vec::new();
    psi_t_observed(&u0, &f0, &eos, t_final, opts, |_, flow| {
        flows.push(flow.clone());
    })
    .unwrap();
    let psi_flow = flows.last().unwrap();

    // --- manual path with identical stepping ---
    let mut state = CompressibleState::new(u0.clone(), f0.clone(), 0.0).unwrap();
    let dt0 = state.cfl_dt(&eos, 0.4).unwrap();
    let m = 2usize;
    let chunks = (t_final / (dt0 * m as f64)).ceil().max(1.0) as usize;
    let dt = t_final / (chunks * m) as f64;
    let labels = marker_labels(&spec);
    let n = labels.len();
    let mut flow = FlowMap::identity(&u0);
    for _ in 0..chunks {
        let a = state.u.clone();
        state = rk4_compressible_step(&state, &eos, dt).unwrap();
        let b = state.u.clone();
        state = rk4_compressible_step(&state, &eos, dt).unwrap();
        let c = state.u.clone();
        // manual RK4 over [t, t+2dt]
        let pos0 = flow.positions();
        let vel = |u: &VectorField, pts: &[(f64, f64)]| (u.x.eval_at(pts), u.y.eval_at(pts));
        let shift = |p: &[(f64, f64)], kx: &[f64], ky: &[f64], h: f64| {
            p.iter()
                .zip(kx.iter().zip(ky.iter()))
                .map(|(&(x, y), (&ax, &ay))| (x + h * ax, y + h * ay))
                .collect::<Vec<_>>()
        };
        let h = 2.0 * dt;
        let (k1x, k1y) = vel(&a, &pos0);
        let p2 = shift(&pos0, &k1x, &k1y, h / 2.0);
        let (k2x, k2y) = vel(&b, &p2);
        let p3 = shift(&pos0, &k2x, &k2y, h / 2.0);
        let (k3x, k3y) = vel(&b, &p3);
        let p4 = shift(&pos0, &k3x, &k3y, h);
        let (k4x, k4y) = vel(&c, &p4);
        let mut dx = Vec::with_capacity(n);
        let mut dy = Vec::with_capacity(n);
        for i in 0..n {
            dx.push(pos0[i].0 - labels[i].0 + h / 6.0 * (k1x[i] + 2.0 * (k2x[i] + k3x[i]) + k4x[i]));
            dy.push(pos0[i].1 - labels[i].1 + h / 6.0 * (k1y[i] + 2.0 * (k2y[i] + k3y[i]) + k4y[i]));
        }
        flow = FlowMap::from_parts(
            vector_from_marker_values(spec, &dx, &dy),
            VectorField::zeros_velocity(spec),
            state.t,
        );
    }
    println!(
        "chunks = {chunks}, disp diff: x {:.3e}, y {:.3e} (disp scale {:.3e})",
        (&psi_flow.disp.x - &flow.disp.x).max_abs(),
        (&psi_flow.disp.y - &flow.disp.y).max_abs(),
        flow.disp.max_abs()
    );
}
