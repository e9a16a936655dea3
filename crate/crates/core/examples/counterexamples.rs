//! The two families that rule out a strong coupling / coupling creation
//! inequality: heavy tails (creation vanishes, distance stays 2) and radial
//! perturbations (the ratio blows up).
//!
//! `cargo run --release --example counterexamples`

use nanbu_coupling::inequalities::{counterexample_report, CounterexampleKind, CounterexampleSetup};

fn main() -> nanbu_coupling::Result<()> {
    let setup = CounterexampleSetup { n: 1024, replicas: 64, shell: 0, ..Default::default() };
    let grid: Vec<(f64, f64)> = [2.0, 4.0, 8.0, 16.0, 32.0].iter().map(|&r| (r, 0.0)).collect();
    println!("{:>4} {:>8} {:>14} {:>12}", "R", "m_1", "E|U-V|^2", "E bracket");
    for r in counterexample_report(CounterexampleKind::HeavyTail, &grid, &setup)? {
        println!("{:>4} {:>8.4} {:>8.4}±{:.4} {:>12.4e}", r.param1, r.moment_q.value, r.distance.value, r.distance.std_error, r.bracket.value);
    }

    let setup = CounterexampleSetup { n: 4096, replicas: 8, shell: 64, ..Default::default() };
    let path = [(0.5, 1.0), (1.0, 1.1), (2.0, 2.03), (3.0, 3.02), (4.0, 4.01)];
    println!("\n{:>5} {:>5} {:>12}", "r-", "r+", "ratio");
    for r in counterexample_report(CounterexampleKind::Radial, &path, &setup)? {
        println!("{:>5} {:>5} {:>8.3}±{:.3}", r.param1, r.param2, r.ratio.value, r.ratio.std_error);
    }
    Ok(())
}
