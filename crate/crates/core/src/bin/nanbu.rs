use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use nanbu_coupling::experiment::{compute, run_scenario, validate, ExperimentConfig, Scenario};
use nanbu_coupling::inequalities::CounterexampleKind;
use nanbu_coupling::Error;

#[derive(Parser)]
#[command(name = "nanbu", version, about = "Coupled Nanbu particle system experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    #[value(name = "heavy_tail")]
    HeavyTail,
    Radial,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario described by a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long)]
        renormalize: bool,
        /// Extra `key=value` overrides, applied last.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Check a config file and list every problem.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Tabulate a counterexample family on stdout.
    Counterexample {
        #[arg(long, value_enum)]
        kind: Kind,
        /// `R` values (`2,4,8`) or windows (`1:1.1,2:2.03`).
        #[arg(long)]
        grid: String,
        #[arg(long, default_value_t = 4096)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        d: usize,
        #[arg(long, default_value_t = 64)]
        replicas: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        shell: usize,
        /// Also write CSV and meta.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.is_invariant_violation() { 2 } else { 1 })
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Simulate { config, seed, out, replicas, renormalize, set } => {
            let mut cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out = o;
            }
            if let Some(r) = replicas {
                cfg.replicas = r;
            }
            cfg.renormalize |= renormalize;
            for s in &set {
                if let Err(e) = cfg.apply_override(s) {
                    return fail(e);
                }
            }
            match run_scenario(&cfg) {
                Ok(r) => {
                    println!("wrote {} rows to {} ({})", r.rows, r.csv.display(), r.meta.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Validate { config } => match ExperimentConfig::load(&config) {
            Err(e) => fail(e),
            Ok(cfg) => {
                let diags = validate(&cfg);
                for d in &diags {
                    println!("{d}");
                }
                if diags.is_empty() {
                    println!("ok");
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(1)
                }
            }
        },
        Command::Counterexample { kind, grid, n, d, replicas, seed, shell, out } => {
            let mut cfg = ExperimentConfig {
                scenario: Scenario::Counterexample,
                n: Some(n),
                d,
                replicas,
                seed,
                shell,
                counterexample: match kind {
                    Kind::HeavyTail => CounterexampleKind::HeavyTail,
                    Kind::Radial => CounterexampleKind::Radial,
                },
                ..Default::default()
            };
            if let Err(e) = cfg.apply_override(&format!("grid={grid}")) {
                return fail(e);
            }
            let csv = match out {
                Some(o) => {
                    cfg.out = o;
                    run_scenario(&cfg).and_then(|r| Ok(std::fs::read_to_string(r.csv)?))
                }
                None => compute(&cfg).map(|t| t.to_csv()),
            };
            match csv {
                Ok(text) => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
    }
}
