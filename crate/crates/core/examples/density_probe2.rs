//! Scratch probe: where does the density-identity drift come from?

use lowmach::domain::{random_scalar, random_solenoidal, DomainSpec, Parity};
use lowmach::eos::Eos;
use lowmach::lagrange::{psi_t_observed, PsiOptions};
use lowmach::rng::Rng;

fn main() {
    let spec = DomainSpec::torus(64, 64, 1.0);
    let k = 1.0e3;
    let eos = Eos::gamma_law(k, 1.4);
    let mut rng = Rng::new(404);
    let u0 = random_solenoidal(spec, 2, &mut rng);
    let u0 = u0.scale(0.2 / u0.max_abs());
    let f0 = random_scalar(spec, Parity::Periodic, 2, &mut rng).scale(0.3 / k);
    let mut chunk = 0usize;
    psi_t_observed(&u0, &f0, &eos, 0.05, PsiOptions::default(), |state, flow| {
        chunk += 1;
        if chunk % 40 == 0 {
            // tail content of f and of the advection product
            let c = state.f.spectrum();
            let mut tail = 0.0f64;
            let mut band = 0.0f64;
            for ((j, i), v) in c.indexed_iter() {
                let mj = lowmach::fft::signed_mode(j, 64).abs();
                let mi = lowmach::fft::signed_mode(i, 64).abs();
                if mj.max(mi) > 15 {
                    tail += v.norm_sqr();
                } else {
                    band += v.norm_sqr();
                }
            }
            let adv_raw = &state.u.x.mul_raw(&state.f.dx()) + &state.u.y.mul_raw(&state.f.dy());
            let removed = (&adv_raw - &adv_raw.dealiased()).l2();
            // marker-side: d(logJ)/dt vs (div u)∘ζ with one extra advance
            let divu = state.u.div();
            let pos = flow.positions();
            let dvals = divu.eval_at(&pos);
            let j_now = flow.jacobian().map(f64::ln);
            // f∘ζ evolution check: ḟ∘ζ = −div u∘ζ
            let fvals = state.f.eval_at(&pos);
            let _ = (fvals, dvals, j_now);
            println!(
                "t = {:.4}: f tail(>15) {:.3e}, band {:.3e}, dealias-removed(adv) {:.3e}",
                state.t,
                tail.sqrt(),
                band.sqrt(),
                removed
            );
        }
    })
    .unwrap();
}
