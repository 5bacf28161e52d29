//! Scratch probe: density-identity defect vs marker substep and time.

use lowmach::domain::{random_scalar, random_solenoidal, DomainSpec, Parity};
use lowmach::eos::Eos;
use lowmach::lagrange::{psi_t_observed, BackwardMap, PsiOptions};
use lowmach::rng::Rng;

fn main() {
    let spec = DomainSpec::torus(64, 64, 1.0);
    let k = 1.0e3;
    let eos = Eos::gamma_law(k, 1.4);
    let mut rng = Rng::new(404);
    let u0 = random_solenoidal(spec, 2, &mut rng);
    let u0 = u0.scale(0.2 / u0.max_abs());
    let f0 = random_scalar(spec, Parity::Periodic, 2, &mut rng).scale(0.3 / k);
    println!("|grad u| proxy: {:.3}", u0.x.grad().hs(0.0) + u0.y.grad().hs(0.0));

    for substep in [1usize, 2] {
        let mut rows = Vec::new();
        let mut chunk = 0usize;
        let mut warm: Option<BackwardMap> = None;
        let f0c = f0.clone();
        let opts = PsiOptions { marker_substep: substep, dt_safety: 0.4 / substep as f64, ..PsiOptions::default() };
        let t_final = 0.06;
        psi_t_observed(&u0, &f0, &eos, t_final, opts, |state, flow| {
            chunk += 1;
            let stride = 40 * substep;
            if chunk % stride == 0 {
                let bwd = BackwardMap::compute_warm(flow, warm.as_ref()).unwrap();
                let h = bwd.apply(&flow.jacobian().map(f64::ln).scale(-1.0));
                let rebuilt = &f0c + &h;
                let defect = (&rebuilt - &state.f).l2();
                // label-space variant: f(t)∘ζ vs f₀∘ζ − log J (no ζ⁻¹ solve)
                let pos = flow.positions();
                let spec2 = *state.f.spec();
                let to_field = |vals: Vec<f64>| {
                    let mut a = ndarray::Array2::zeros((spec2.ny, spec2.nx));
                    for (idx, v) in vals.into_iter().enumerate() {
                        a[(idx / spec2.nx, idx % spec2.nx)] = v;
                    }
                    lowmach::ScalarField::from_values(spec2, Parity::Periodic, a)
                };
                let f_comp = to_field(state.f.eval_at(&pos));
                let f0_comp = to_field(f0c.eval_at(&pos));
                let label_defect =
                    (&(&f_comp - &f0_comp) + &flow.jacobian().map(f64::ln)).l2();
                rows.push((state.t, defect, label_defect, 0.0));
                warm = Some(bwd);
            }
        })
        .unwrap();
        println!("substep m = {substep}:");
        for (t, err, mean, fluct) in rows {
            println!("  t = {t:.3}: defect {err:.3e}, label-space {mean:.3e}");
        }
    }
}
