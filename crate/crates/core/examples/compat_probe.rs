//! Scratch probe: compat projection residual histories across k and
//! violation amplitude (run manually while tuning).

use lowmach::analysis::{compat_project, compat_residuals};
use lowmach::domain::{random_scalar, random_solenoidal, DomainSpec, Parity, ScalarField};
use lowmach::eos::Eos;
use lowmach::rng::Rng;

fn main() {
    let spec = DomainSpec::channel(32, 32, 1.0);
    for amp in [0.5, 5.0, 50.0] {
        for k in [1.0e3, 1.0e4] {
            let eos = Eos::gamma_law(k, 1.4);
            let mut rng = Rng::new(1010);
            let u = random_solenoidal(spec, 2, &mut rng);
            let u = u.scale(0.5 / u.max_abs());
            let fe = random_scalar(spec, Parity::EvenInY, 2, &mut rng).scale(1.0 / k);
            let fo = random_scalar(spec, Parity::OddInY, 2, &mut rng).scale(amp / k);
            let f0 = ScalarField::mix(&fe, &fo);
            let before = compat_residuals(&u, &f0, &eos).unwrap();
            let proj = compat_project(&u, &f0, &eos, 25).unwrap();
            println!(
                "amp={amp:5} k={k:8.0}: before={:.3e} contraction={:.3e} rounds={} history_max={:?}",
                before.max_residual(),
                proj.contraction,
                proj.report.history.len() - 1,
                proj.report
                    .history
                    .iter()
                    .map(|h| format!("{:.2e}", h.iter().cloned().fold(0.0f64, f64::max)))
                    .collect::<Vec<_>>()
            );
        }
    }
}
