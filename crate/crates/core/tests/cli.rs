use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nanbu_coupling::experiment::{run_scenario, ExperimentConfig, Scenario, TRAJECTORY_HEADER};

fn nanbu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nanbu")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.display().to_string()
}

const DECAY: &str = "scenario = decay\nN = 32\nd = 3\nkernel = uniform(mass=1)\nt_end = 1\nrecords = 5\nreplicas = 6\nseed = 11\n";

#[test]
fn simulate_is_byte_identical_and_thread_independent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "decay.conf", DECAY);
    let mut outputs = Vec::new();
    for (tag, threads) in [("a", "1"), ("b", "1"), ("c", "3")] {
        let out = dir.path().join(tag);
        let o = nanbu(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--set", &format!("threads={threads}")]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(fs::read(out.join("decay.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn rows_match_schema_and_meta_records_hash() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::parse(DECAY).unwrap();
    cfg.out = dir.path().join("run");
    cfg.renormalize = true;
    let report = run_scenario(&cfg).unwrap();
    let text = fs::read_to_string(&report.csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(TRAJECTORY_HEADER));
    let width = TRAJECTORY_HEADER.split(',').count();
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6 * 6);
    for r in &rows {
        let fields: Vec<&str> = r.split(',').collect();
        assert_eq!(fields.len(), width);
        assert!(fields.iter().all(|f| f.parse::<f64>().is_ok()), "{r}");
    }
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report.meta).unwrap()).unwrap();
    assert_eq!(meta["config_sha256"], cfg.hash());
    assert_eq!(meta["renormalize"], true);
    assert_eq!(meta["master_seed"], 11);
    assert_eq!(meta["replica_seeds"].as_array().unwrap().len(), 6);
    assert_eq!(ExperimentConfig::parse(meta["config_text"].as_str().unwrap()).unwrap(), cfg);
}

#[test]
fn zero_horizon_gives_single_initial_record() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::parse(DECAY).unwrap();
    cfg.t_end = 0.0;
    cfg.replicas = 2;
    cfg.out = dir.path().to_path_buf();
    run_scenario(&cfg).unwrap();
    let text = fs::read_to_string(dir.path().join("decay.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.starts_with("0,") && r.ends_with(",0")));
}

#[test]
fn creation_rate_records_three_times() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        scenario: Scenario::CreationRate,
        n: Some(16),
        kernel: "atoms([(pi/2, 1)])".into(),
        t_end: 0.5,
        replicas: 2,
        out: dir.path().to_path_buf(),
        ..Default::default()
    };
    run_scenario(&cfg).unwrap();
    let text = fs::read_to_string(dir.path().join("creation_rate.csv")).unwrap();
    let times: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(times, ["0", "0.25", "0.5", "0", "0.25", "0.5"]);
}

#[test]
fn validate_reports_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.conf", "scenario = decay\nd = 2\nkernel = power(nu=0.5)\neps = 0\nreplicas = 0\n");
    let o = nanbu(&["validate", "--config", &bad]);
    let out = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(1));
    assert!(out.contains("dimension must be ≥ 3"), "{out}");
    assert!(out.contains("kernel:"), "{out}");
    assert!(out.contains("replicas:"), "{out}");

    let good = write_config(dir.path(), "good.conf", DECAY);
    let o = nanbu(&["validate", "--config", &good]);
    assert!(o.status.success());
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), "ok");
}

#[test]
fn parse_errors_point_at_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "typo.conf", "scenario = decay\nN = 32\nrecrods = 4\n");
    let o = nanbu(&["simulate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3") && err.contains("recrods"), "{err}");
}

#[test]
fn counterexample_subcommand_prints_table() {
    let o = nanbu(&["counterexample", "--kind", "heavy_tail", "--grid", "2,4", "--n", "128", "--replicas", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = String::from_utf8_lossy(&o.stdout);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("param1,param2,m_q"));
    assert!(lines[1].starts_with("2,1,"));
}

#[test]
fn fuzz_scenarios_run_clean() {
    let dir = tempfile::tempdir().unwrap();
    for scenario in [Scenario::FuzzFundineq, Scenario::FuzzHolder, Scenario::KappaWishart] {
        let cfg = ExperimentConfig {
            scenario,
            states: 12,
            sizes: vec![8, 32],
            out: dir.path().join(scenario.name()),
            ..Default::default()
        };
        let report = run_scenario(&cfg).unwrap();
        assert!(report.rows > 0);
    }
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let o = nanbu(&["validate", "--config", path.to_str().unwrap()]);
        assert!(o.status.success(), "{}: {}", path.display(), String::from_utf8_lossy(&o.stdout));
        seen += 1;
    }
    assert!(seen >= Scenario::ALL.len());
}
