//! A coupled Nanbu run: both copies share clock, pairs and angles, and the
//! coupling distance decreases event by event.
//!
//! `cargo run --release --example coupled_nanbu`

use nanbu_coupling::inequalities::{build, CoupledSampleSpec, SampleKind};
use nanbu_coupling::observables::{coupling_creation, coupling_distance};
use nanbu_coupling::particles::{run, RunOptions};
use nanbu_coupling::seeds::replica_rng;
use nanbu_coupling::AngularKernel;

fn main() -> nanbu_coupling::Result<()> {
    let mut cs = build(&CoupledSampleSpec::new(SampleKind::Independent, 256, 3, 7))?;
    let kernel = AngularKernel::parse("power(nu=0.5, eps=0.2)")?;
    let mut rng = replica_rng(7, 0);
    println!("{:>6} {:>10} {:>12} {:>10}", "t", "events", "distance", "creation");
    let summary = run(&mut cs, &kernel, &RunOptions::uniform_grid(8.0, 8), &mut rng, |p, s| {
        println!("{:>6.2} {:>10} {:>12.5e} {:>10.4e}", p.time, p.events, coupling_distance(s), coupling_creation(s, &kernel).value);
        Ok(())
    })?;
    println!("{} events ({} diagonal), max conservation residual {:.1e}", summary.events, summary.diagonal_events, summary.max_drift);
    Ok(())
}
