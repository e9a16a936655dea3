//! Spherical coupling of two collisional directions: one shared scattering
//! angle and azimuth, transported by the rotation taking `n_u` to `n_v`.
//!
//! `cargo run --example sphere_coupling`

use std::f64::consts::PI;

use nanbu_coupling::geometry::{coupled_step, wallis_ratio, UnitVector};
use nanbu_coupling::seeds::replica_rng;

fn main() -> nanbu_coupling::Result<()> {
    let mut rng = replica_rng(1, 0);
    for d in 3..=6 {
        let n_u = UnitVector::uniform(d, &mut rng)?;
        let n_v = UnitVector::uniform(d, &mut rng)?;
        let before: f64 = n_u.iter().zip(n_v.iter()).map(|(a, b)| (a - b).powi(2)).sum();
        let theta = PI / 3.0;
        let k = 200_000;
        let mut mean = 0.0;
        for _ in 0..k {
            let st = coupled_step(&n_u, &n_v, theta, &mut rng);
            let after: f64 = st.n_u.iter().zip(st.n_v.iter()).map(|(a, b)| (a - b).powi(2)).sum();
            mean += after / before / k as f64;
        }
        let predicted = 1.0 - theta.sin().powi(2) * wallis_ratio(d)?;
        println!("d = {d}: E|n'_u - n'_v|^2 / |n_u - n_v|^2 = {mean:.4} (predicted {predicted:.4})");
    }
    Ok(())
}
