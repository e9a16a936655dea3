//! Modified moments of uniform states approach the Gaussian pair moment as
//! `N` grows.
//!
//! `cargo run --release --example wishart_trend`

use nanbu_coupling::experiment::gaussian_pair_moment;
use nanbu_coupling::observables::modified_moment;
use nanbu_coupling::seeds::replica_rng;
use nanbu_coupling::ParticleState;

fn main() -> nanbu_coupling::Result<()> {
    let d = 3;
    for p in [2.0, 4.0] {
        println!("p0 = 2, p = {p}: Gaussian target {:.4}", gaussian_pair_moment(d, p));
        for n in [16, 64, 256, 1024] {
            let samples = (0..100)
                .map(|k| ParticleState::init_uniform(n, d, &mut replica_rng(n as u64, k)))
                .collect::<Result<Vec<_>, _>>()?;
            let m = modified_moment(&samples, 2.0, p)?;
            println!("  N = {n:>5}: {:.4} ± {:.4}", m.value, m.std_error);
        }
    }
    Ok(())
}
