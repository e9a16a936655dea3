//! Two particles with equal invariants: the summed squared distance decays
//! exponentially at rate `lambda (d-2)/(d-1)`.
//!
//! `cargo run --release --example n2_rate`

use std::f64::consts::PI;

use nanbu_coupling::experiment::n2_state;
use nanbu_coupling::geometry::wallis_ratio;
use nanbu_coupling::observables::coupling_distance;
use nanbu_coupling::particles::{run, RunOptions};
use nanbu_coupling::seeds::replica_rng;
use nanbu_coupling::AngularKernel;

fn main() -> nanbu_coupling::Result<()> {
    let kernel = AngularKernel::atom(PI / 2.0, 1.0)?;
    for d in [3, 4, 5] {
        let times: Vec<f64> = (0..=10).map(|i| 0.3 * i as f64).collect();
        let mut mean = vec![0.0; times.len()];
        let replicas = 5000;
        for k in 0..replicas {
            let mut rng = replica_rng(d as u64, k);
            let mut cs = n2_state(d, &mut rng)?;
            let mut i = 0;
            run(&mut cs, &kernel, &RunOptions::at_times(3.0, times.clone()), &mut rng, |_, s| {
                mean[i] += 2.0 * coupling_distance(s) / replicas as f64;
                i += 1;
                Ok(())
            })?;
        }
        // least squares on log E S(t)
        let m = times.len() as f64;
        let tx = times.iter().sum::<f64>() / m;
        let ly: Vec<f64> = mean.iter().map(|x| x.ln()).collect();
        let my = ly.iter().sum::<f64>() / m;
        let sxy: f64 = times.iter().zip(&ly).map(|(t, y)| (t - tx) * (y - my)).sum();
        let sxx: f64 = times.iter().map(|t| (t - tx).powi(2)).sum();
        let predicted = kernel.levy_intensity() * wallis_ratio(d)?;
        println!("d = {d}: fitted rate {:.4}, predicted {predicted:.4}", -sxy / sxx);
    }
    Ok(())
}
