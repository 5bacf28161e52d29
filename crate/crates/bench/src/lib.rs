//! Shared fixtures for the kernel benchmarks.

use lowmach::domain::{random_scalar, random_solenoidal, DomainSpec, Parity, ScalarField, VectorField};
use lowmach::eos::Eos;
use lowmach::rng::Rng;
use lowmach::solvers::CompressibleState;

pub fn torus(n: usize) -> DomainSpec {
    DomainSpec::torus(n, n, 1.0)
}

pub fn scalar_fixture(n: usize) -> ScalarField {
    let mut rng = Rng::new(11);
    random_scalar(torus(n), Parity::Periodic, 6, &mut rng)
}

pub fn velocity_fixture(n: usize) -> VectorField {
    let mut rng = Rng::new(13);
    random_solenoidal(torus(n), 4, &mut rng)
}

pub fn compressible_fixture(n: usize, k: f64) -> (CompressibleState, Eos) {
    let mut rng = Rng::new(17);
    let spec = torus(n);
    let u = random_solenoidal(spec, 3, &mut rng);
    let f = random_scalar(spec, Parity::Periodic, 3, &mut rng).scale(1.0 / k);
    (
        CompressibleState::new(u, f, 0.0).expect("valid state"),
        Eos::gamma_law(k, 1.4),
    )
}
