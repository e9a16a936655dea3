//! Finite-difference slope of the mean coupling distance against the
//! coupling creation at time 0.
//!
//! `cargo run --release --example creation_rate`

use std::f64::consts::PI;

use nanbu_coupling::inequalities::{build, CoupledSampleSpec, SampleKind};
use nanbu_coupling::observables::{coupling_creation, coupling_distance};
use nanbu_coupling::particles::{run, RunOptions};
use nanbu_coupling::seeds::{derived_seed, replica_rng};
use nanbu_coupling::AngularKernel;

fn main() -> nanbu_coupling::Result<()> {
    let kernel = AngularKernel::atom(PI / 2.0, 1.0)?;
    let (n, h, replicas) = (128, 0.02, 2000u64);
    let (mut slope, mut creation) = (0.0, 0.0);
    for k in 0..replicas {
        let mut cs = build(&CoupledSampleSpec::new(SampleKind::Independent, n, 3, derived_seed(3, k)))?;
        let d0 = coupling_distance(&cs);
        creation += coupling_creation(&cs, &kernel).value / replicas as f64;
        let mut dh = d0;
        run(&mut cs, &kernel, &RunOptions::at_times(h, vec![h]), &mut replica_rng(3, k), |_, s| {
            dh = coupling_distance(s);
            Ok(())
        })?;
        slope += (dh - d0) / h / replicas as f64;
    }
    println!("finite-difference slope {slope:.4}, -creation {:.4}", -creation);
    Ok(())
}
