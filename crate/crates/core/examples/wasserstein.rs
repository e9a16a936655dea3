//! Empirical Wasserstein-2 between the two marginals of a coupled run; the
//! coupling distance is an upper bound at every time.
//!
//! `cargo run --release --example wasserstein`

use nanbu_coupling::inequalities::{build, CoupledSampleSpec, SampleKind};
use nanbu_coupling::observables::{coupling_distance, wasserstein2_empirical};
use nanbu_coupling::particles::{run, RunOptions};
use nanbu_coupling::seeds::replica_rng;
use nanbu_coupling::AngularKernel;

fn main() -> nanbu_coupling::Result<()> {
    let mut cs = build(&CoupledSampleSpec::new(SampleKind::Independent, 128, 3, 5))?;
    let kernel = AngularKernel::uniform(1.0)?;
    println!("{:>5} {:>12} {:>12}", "t", "W2^2", "coupling");
    run(&mut cs, &kernel, &RunOptions::uniform_grid(6.0, 6), &mut replica_rng(5, 0), |p, s| {
        println!("{:>5.1} {:>12.5e} {:>12.5e}", p.time, wasserstein2_empirical(&s.u, &s.v)?, coupling_distance(s));
        Ok(())
    })?;
    Ok(())
}
