//! Angular kernels, Grad's cut-off and the Levy intensity
//! `lambda = int sin^2(theta) b(dtheta)`.
//!
//! `cargo run --example angular_kernels`

use nanbu_coupling::kernels::{grad_cutoff, AngularKernel};
use nanbu_coupling::seeds::replica_rng;

fn main() -> nanbu_coupling::Result<()> {
    for spec in ["uniform(mass=1)", "atoms([(pi/2, 1), (pi/4, 0.5)])", "power(nu=0.5, eps=0.1)", "power(nu=1.5, eps=0.01)"] {
        let k = AngularKernel::parse(spec)?;
        println!("{k}\n  total mass {:.4}, lambda {:.4}", k.total_mass(), k.levy_intensity());
    }

    // grazing limit: the mass blows up, lambda converges
    let power = AngularKernel::power(1.0, 1.0)?;
    for eps in [1.0, 0.1, 0.01, 0.001] {
        let k = grad_cutoff(&power, eps)?;
        println!("power(nu=1) eps = {eps:<6} mass {:>10.3}  lambda {:.6}", k.total_mass(), k.levy_intensity());
    }

    let k = AngularKernel::parse("power(nu=0.5, eps=0.1)")?;
    let mut rng = replica_rng(2, 0);
    let n = 100_000;
    let mean_sin2 = (0..n).map(|_| k.sample_theta(&mut rng).map(|t| t.sin().powi(2))).sum::<Result<f64, _>>()? / n as f64;
    println!("sampled E sin^2(theta) * mass = {:.4} vs lambda {:.4}", mean_sin2 * k.total_mass(), k.levy_intensity());
    Ok(())
}
