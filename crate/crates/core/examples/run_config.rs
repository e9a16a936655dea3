//! Parse, validate and run an experiment config, as the `nanbu` binary does.
//!
//! `cargo run --release --example run_config [path/to/config]`

use nanbu_coupling::experiment::{run_scenario, validate, ExperimentConfig};

const DEFAULT: &str = "
scenario = eps_sweep
N = 64
kernel = power(nu=0.5)
eps_grid = 0.05, 0.2, 0.8
t_end = 2
records = 4
replicas = 2
seed = 3
";

fn main() -> nanbu_coupling::Result<()> {
    let mut cfg = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::load(path.as_ref())?,
        None => ExperimentConfig::parse(DEFAULT)?,
    };
    cfg.out = std::env::temp_dir().join("nanbu-run-config");
    let diags = validate(&cfg);
    if !diags.is_empty() {
        for d in diags {
            eprintln!("{d}");
        }
        std::process::exit(1);
    }
    let report = run_scenario(&cfg)?;
    println!("config hash {}", cfg.hash());
    print!("{}", std::fs::read_to_string(&report.csv)?);
    Ok(())
}
