//! Scratch probe: RingTape interpolation against an analytic signal.

use lowmach::domain::{DomainSpec, ScalarField, VectorField};
use lowmach::lagrange::RingTape;
use lowmach::solvers::BackgroundVelocity;

fn main() {
    let spec = DomainSpec::torus(8, 8, 1.0);
    let omega = 563.0;
    let dt = 1.94e-4;
    let field = |t: f64| {
        VectorField::new(
            ScalarField::constant(spec, (omega * t).sin()),
            ScalarField::constant(spec, 0.0),
        )
    };
    let mut ring = RingTape::new(dt, 10); // cap like m=4
    let mut worst_node = 0.0f64;
    let mut worst_mid = 0.0f64;
    for i in 0..400 {
        ring.push(field(i as f64 * dt));
        if i >= 12 && i % 4 == 0 {
            // query the chunk window [t-4dt, t] like psi_t's flow.advance
            let t_chunk = (i - 4) as f64 * dt;
            for (label, tq) in [
                ("start", t_chunk),
                ("mid", t_chunk + 2.0 * dt),
                ("end", t_chunk + 4.0 * dt),
            ] {
                let v = ring.velocity_at(tq).unwrap();
                let got = v.x.values()[(0, 0)];
                let expect = (omega * tq).sin();
                let err = (got - expect).abs();
                if label == "mid" {
                    worst_mid = worst_mid.max(err);
                } else {
                    worst_node = worst_node.max(err);
                }
            }
        }
    }
    println!("worst node-sample error: {worst_node:.3e}");
    println!("worst midpoint error:    {worst_mid:.3e}");
}
