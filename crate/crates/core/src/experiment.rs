//! Reproducible experiments: a flat `key = value` configuration, validation
//! with per-field diagnostics, and scenario runners writing CSV artifacts
//! plus a `meta.json` sidecar.
//!
//! ```text
//! # decay of the coupling distance
//! scenario = decay
//! N = 64
//! d = 3
//! kernel = uniform(mass=1)
//! t_end = 2
//! records = 20
//! replicas = 8
//! seed = 42
//! out = results/decay
//! ```
//!
//! Replicas run on a thread pool of `threads` workers (0 = all cores); rows
//! are merged by replica index, so output bytes do not depend on the pool
//! size.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::inequalities::{
    build, counterexample_report, fuzz_spec, CoupledSampleSpec, CounterexampleKind, CounterexampleSetup,
    RadialProfile, SampleKind,
};
use crate::kernels::{parse_number, AngularKernel};
use crate::observables::{
    bracket_and_parallelogram, covariance, holder_bound, kappa, modified_moment, p_moment_with, sharp_inequality,
    PairPolicy,
};
use crate::particles::{run, CoupledState, ParticleState, RunOptions};
use crate::seeds::{derived_seed, replica_rng};
use crate::geometry::{wallis_ratio, UnitVector};

/// Column set of trajectory CSVs.
pub const TRAJECTORY_HEADER: &str =
    "t,replica,N,d,eps,coupling_dist,creation,parallelogram,kappa_u,kappa_v,m3_u,m4_u,m3_v,m4_v,events";

pub const FUNDINEQ_HEADER: &str = "case,kind,N,d,lhs,kappa_min,parallelogram,rhs,tight_rhs,violation";

pub const HOLDER_HEADER: &str = "case,kind,N,d,alpha,p1,lhs,rhs,violation";

pub const COUNTEREXAMPLE_HEADER: &str =
    "param1,param2,m_q,m_q_se,coupling_dist,coupling_dist_se,bracket,bracket_se,ratio,ratio_se";

pub const WISHART_HEADER: &str = "N,d,samples,p0,p,modified_moment,std_error,target";

/// Relative tolerance for inequality fuzzing.
pub const FUZZ_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Decay,
    CreationRate,
    N2Rate,
    FuzzFundineq,
    FuzzHolder,
    Counterexample,
    KappaWishart,
    EpsSweep,
}

impl Scenario {
    pub const ALL: [Scenario; 8] = [
        Scenario::Decay,
        Scenario::CreationRate,
        Scenario::N2Rate,
        Scenario::FuzzFundineq,
        Scenario::FuzzHolder,
        Scenario::Counterexample,
        Scenario::KappaWishart,
        Scenario::EpsSweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Decay => "decay",
            Scenario::CreationRate => "creation_rate",
            Scenario::N2Rate => "n2_rate",
            Scenario::FuzzFundineq => "fuzz_fundineq",
            Scenario::FuzzHolder => "fuzz_holder",
            Scenario::Counterexample => "counterexample",
            Scenario::KappaWishart => "kappa_wishart",
            Scenario::EpsSweep => "eps_sweep",
        }
    }

    fn is_trajectory(self) -> bool {
        matches!(self, Scenario::Decay | Scenario::CreationRate | Scenario::N2Rate | Scenario::EpsSweep)
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Scenario::ALL.into_iter().find(|sc| sc.name() == s).ok_or_else(|| {
            let names: Vec<_> = Scenario::ALL.iter().map(|s| s.name()).collect();
            format!("unknown scenario '{s}' (expected one of {})", names.join(", "))
        })
    }
}

/// Initial coupling of trajectory scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    Independent,
    Identity,
    ColinearIsotropic,
    ColinearDesign,
    HeavyTail,
}

impl InitKind {
    const ALL: [InitKind; 5] = [
        InitKind::Independent,
        InitKind::Identity,
        InitKind::ColinearIsotropic,
        InitKind::ColinearDesign,
        InitKind::HeavyTail,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InitKind::Independent => "independent",
            InitKind::Identity => "identity",
            InitKind::ColinearIsotropic => "colinear_isotropic",
            InitKind::ColinearDesign => "colinear_design",
            InitKind::HeavyTail => "heavy_tail",
        }
    }

    fn sample_kind(self, param: f64) -> SampleKind {
        match self {
            InitKind::Independent => SampleKind::Independent,
            InitKind::Identity => SampleKind::Identity,
            InitKind::ColinearIsotropic => SampleKind::ColinearIsotropic(RadialProfile::power(param)),
            InitKind::ColinearDesign => SampleKind::ColinearDesign(RadialProfile::power(param)),
            InitKind::HeavyTail => SampleKind::HeavyTail { r: param },
        }
    }
}

impl FromStr for InitKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        InitKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<_> = InitKind::ALL.iter().map(|k| k.name()).collect();
            format!("unknown init '{s}' (expected one of {})", names.join(", "))
        })
    }
}

/// A validation finding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl Diagnostic {
    fn new(field: &str, message: impl Into<String>) -> Self {
        Self { field: field.to_string(), message: message.into() }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    /// Particle count; `None` means 64 (2 for `n2_rate`).
    pub n: Option<usize>,
    pub d: usize,
    /// Kernel in the grammar of [`AngularKernel::parse`].
    pub kernel: String,
    /// Grad cut-off applied on top of `kernel` when set.
    pub eps: Option<f64>,
    pub t_end: f64,
    /// Number of record intervals on `[0, t_end]`.
    pub records: usize,
    pub record_every: Option<u64>,
    pub replicas: usize,
    /// Worker threads, 0 = available cores.
    pub threads: usize,
    pub seed: u64,
    pub init: InitKind,
    /// Profile exponent of colinear inits, or `R` of the heavy-tail init.
    pub init_param: f64,
    pub renormalize: bool,
    pub alphas: Vec<f64>,
    pub p1s: Vec<f64>,
    /// Fuzz cases, or samples per size for `kappa_wishart`.
    pub states: usize,
    /// Particle counts for fuzzing and `kappa_wishart`.
    pub sizes: Vec<usize>,
    pub counterexample: CounterexampleKind,
    /// `R` values (heavy tails) or `r_minus:r_plus` windows (radial).
    pub grid: Vec<(f64, f64)>,
    pub shell: usize,
    pub q: f64,
    pub p0: f64,
    pub p: f64,
    pub eps_grid: Vec<f64>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Decay,
            n: None,
            d: 3,
            kernel: "uniform(mass=1)".into(),
            eps: None,
            t_end: 1.0,
            records: 10,
            record_every: None,
            replicas: 4,
            threads: 0,
            seed: 0,
            init: InitKind::Independent,
            init_param: 2.0,
            renormalize: false,
            alphas: vec![0.5, 1.0, 2.0],
            p1s: vec![1.5, 2.0, 3.0],
            states: 100,
            sizes: Vec::new(),
            counterexample: CounterexampleKind::HeavyTail,
            grid: Vec::new(),
            shell: 64,
            q: 1.0,
            p0: 2.0,
            p: 2.0,
            eps_grid: vec![0.1, 0.3, 1.0],
            out: PathBuf::from("out"),
        }
    }
}

/// Keys in canonical order.
const KEYS: [&str; 26] = [
    "scenario", "N", "d", "kernel", "eps", "t_end", "records", "record_every", "replicas", "threads", "seed",
    "init", "init_param", "renormalize", "alphas", "p1s", "states", "sizes", "counterexample", "grid", "shell",
    "q", "p0", "p", "eps_grid", "out",
];

fn parse_list<T>(value: &str, item: impl Fn(&str) -> std::result::Result<T, String>) -> std::result::Result<Vec<T>, String> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|s| item(s.trim())).collect()
}

fn real(s: &str) -> std::result::Result<f64, String> {
    parse_number(s).map_err(|e| e.to_string())
}

fn integer<T: FromStr>(s: &str) -> std::result::Result<T, String> {
    s.parse::<T>().map_err(|_| format!("expected a nonnegative integer, got '{s}'"))
}

fn boolean(s: &str) -> std::result::Result<bool, String> {
    match s {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got '{s}'")),
    }
}

fn grid_point(s: &str) -> std::result::Result<(f64, f64), String> {
    match s.split_once(':') {
        Some((a, b)) => Ok((real(a.trim())?, real(b.trim())?)),
        None => Ok((real(s)?, 0.0)),
    }
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line_no}: expected 'key = value', got '{line}'")))?;
            let key = key.trim();
            if let Some(prev) = seen.insert(key.to_string(), line_no) {
                return Err(Error::Config(format!(
                    "line {line_no}: field '{key}' already set on line {prev}"
                )));
            }
            cfg.set(key, value.trim())
                .map_err(|e| Error::Config(format!("line {line_no}: field '{key}': {e}")))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
        let key = key.trim();
        self.set(key, value.trim()).map_err(|e| Error::Config(format!("override field '{key}': {e}")))
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "scenario" => self.scenario = value.parse()?,
            "N" | "n" => self.n = Some(integer(value)?),
            "d" => self.d = integer(value)?,
            "kernel" => self.kernel = value.to_string(),
            "eps" => self.eps = Some(real(value)?),
            "t_end" => self.t_end = real(value)?,
            "records" => self.records = integer(value)?,
            "record_every" => self.record_every = Some(integer(value)?),
            "replicas" => self.replicas = integer(value)?,
            "threads" => self.threads = integer(value)?,
            "seed" => self.seed = integer(value)?,
            "init" => self.init = value.parse()?,
            "init_param" => self.init_param = real(value)?,
            "renormalize" => self.renormalize = boolean(value)?,
            "alphas" => self.alphas = parse_list(value, real)?,
            "p1s" => self.p1s = parse_list(value, real)?,
            "states" => self.states = integer(value)?,
            "sizes" => self.sizes = parse_list(value, integer)?,
            "counterexample" => self.counterexample = value.parse().map_err(|e: Error| e.to_string())?,
            "grid" => self.grid = parse_list(value, grid_point)?,
            "shell" => self.shell = integer(value)?,
            "q" => self.q = real(value)?,
            "p0" => self.p0 = real(value)?,
            "p" => self.p = real(value)?,
            "eps_grid" => self.eps_grid = parse_list(value, real)?,
            "out" => self.out = PathBuf::from(value),
            _ => {
                return Err(format!("unknown field (known: {})", KEYS.join(", ")));
            }
        }
        Ok(())
    }

    /// Canonical text form; parsing it gives back the same config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        put("scenario", self.scenario.to_string());
        if let Some(n) = self.n {
            put("N", n.to_string());
        }
        put("d", self.d.to_string());
        put("kernel", self.kernel.clone());
        if let Some(eps) = self.eps {
            put("eps", format!("{eps:?}"));
        }
        put("t_end", format!("{:?}", self.t_end));
        put("records", self.records.to_string());
        if let Some(k) = self.record_every {
            put("record_every", k.to_string());
        }
        put("replicas", self.replicas.to_string());
        put("threads", self.threads.to_string());
        put("seed", self.seed.to_string());
        put("init", self.init.name().to_string());
        put("init_param", format!("{:?}", self.init_param));
        put("renormalize", self.renormalize.to_string());
        put("alphas", join(&self.alphas, |x| format!("{x:?}")));
        put("p1s", join(&self.p1s, |x| format!("{x:?}")));
        put("states", self.states.to_string());
        put("sizes", join(&self.sizes, |x| x.to_string()));
        put("counterexample", self.counterexample.to_string());
        put("grid", join(&self.grid, |(a, b)| format!("{a:?}:{b:?}")));
        put("shell", self.shell.to_string());
        put("q", format!("{:?}", self.q));
        put("p0", format!("{:?}", self.p0));
        put("p", format!("{:?}", self.p));
        put("eps_grid", join(&self.eps_grid, |x| format!("{x:?}")));
        put("out", self.out.display().to_string());
        s
    }

    /// SHA-256 of [`Self::to_text`], hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn particle_count(&self) -> usize {
        self.n.unwrap_or(if self.scenario == Scenario::N2Rate { 2 } else { 64 })
    }

    /// Fuzz and Wishart sizes with scenario defaults.
    pub fn resolved_sizes(&self) -> Vec<usize> {
        if !self.sizes.is_empty() {
            return self.sizes.clone();
        }
        match self.scenario {
            Scenario::KappaWishart => vec![32, 128, 512, 2048],
            _ => vec![8, 64, 512],
        }
    }

    /// Kernel with the configured cut-off applied.
    pub fn resolved_kernel(&self) -> Result<AngularKernel> {
        let k = AngularKernel::parse(&self.kernel)?;
        match self.eps {
            Some(eps) => k.with_cutoff(eps),
            None => Ok(k),
        }
    }
}

/// Every range violation of `cfg`; empty iff [`run_scenario`] accepts it.
pub fn validate(cfg: &ExperimentConfig) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut bad = |field: &str, msg: String| out.push(Diagnostic::new(field, msg));
    if cfg.d < 3 {
        bad("d", format!("dimension must be ≥ 3 (got {})", cfg.d));
    }
    let n = cfg.particle_count();
    if n < 2 {
        bad("N", format!("at least 2 particles are required (got {n})"));
    }
    if cfg.scenario == Scenario::N2Rate && n != 2 {
        bad("N", format!("n2_rate runs N = 2 (got {n})"));
    }
    if cfg.replicas == 0 {
        bad("replicas", "must be at least 1".into());
    }
    if cfg.scenario.is_trajectory() {
        if !(cfg.t_end >= 0.0 && cfg.t_end.is_finite()) {
            bad("t_end", format!("must be finite and ≥ 0 (got {})", cfg.t_end));
        }
        if cfg.records == 0 {
            bad("records", "must be at least 1".into());
        }
        if cfg.record_every == Some(0) {
            bad("record_every", "must be at least 1".into());
        }
        if let Some(eps) = cfg.eps {
            if !(0.0..=std::f64::consts::PI).contains(&eps) {
                bad("eps", format!("cut-off must lie in [0, pi] (got {eps})"));
            }
        }
        match cfg.resolved_kernel() {
            Err(e) => bad("kernel", e.to_string()),
            Ok(k) => {
                if cfg.scenario == Scenario::EpsSweep {
                    if cfg.eps_grid.is_empty() {
                        bad("eps_grid", "must list at least one cut-off".into());
                    }
                    for &eps in &cfg.eps_grid {
                        if let Err(e) = k.with_cutoff(eps).and_then(|k| finite_rate(&k)) {
                            bad("eps_grid", format!("eps = {eps}: {e}"));
                        }
                    }
                } else if let Err(e) = finite_rate(&k) {
                    bad("kernel", e.to_string());
                }
            }
        }
        if cfg.scenario != Scenario::N2Rate {
            let spec = CoupledSampleSpec::new(cfg.init.sample_kind(cfg.init_param), n, cfg.d.max(3), 0);
            if let Err(e) = spec.validate() {
                bad("init", e.to_string());
            }
        }
    }
    match cfg.scenario {
        Scenario::FuzzFundineq | Scenario::FuzzHolder | Scenario::KappaWishart => {
            if cfg.states == 0 {
                bad("states", "must be at least 1".into());
            }
            if cfg.resolved_sizes().iter().any(|&s| s < 2) {
                bad("sizes", "every size must be at least 2".into());
            }
        }
        _ => {}
    }
    if cfg.scenario == Scenario::FuzzHolder {
        if cfg.alphas.is_empty() || cfg.alphas.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            bad("alphas", "need a nonempty list of finite alpha > 0".into());
        }
        if cfg.p1s.is_empty() || cfg.p1s.iter().any(|&p| !(p > 1.0 && p.is_finite())) {
            bad("p1s", "need a nonempty list of finite p1 > 1".into());
        }
    }
    if cfg.scenario == Scenario::KappaWishart && !(cfg.p0 >= 1.0 && cfg.p >= 1.0) {
        bad("p", format!("need p0 ≥ 1 and p ≥ 1 (got {}, {})", cfg.p0, cfg.p));
    }
    if cfg.scenario == Scenario::Counterexample {
        if cfg.grid.is_empty() {
            bad("grid", "must list at least one grid point".into());
        }
        for &(a, b) in &cfg.grid {
            let ok = match cfg.counterexample {
                CounterexampleKind::HeavyTail => a > 1.0 && a.is_finite(),
                CounterexampleKind::Radial => a > 0.0 && a < b && b.is_finite(),
            };
            if !ok {
                let need = match cfg.counterexample {
                    CounterexampleKind::HeavyTail => "R > 1",
                    CounterexampleKind::Radial => "0 < r_minus < r_plus",
                };
                bad("grid", format!("point {a}:{b} violates {need}"));
            }
        }
        if cfg.counterexample == CounterexampleKind::Radial && (cfg.shell % 2 != 0 || cfg.shell + 2 > n) {
            bad("shell", format!("must be even and at most N - 2 (got {})", cfg.shell));
        }
        if !(cfg.q > 0.0) {
            bad("q", format!("must be > 0 (got {})", cfg.q));
        }
    }
    out
}

fn finite_rate(k: &AngularKernel) -> Result<()> {
    if !k.is_finite_mass() {
        Err(Error::InfiniteMass)
    } else if k.total_mass() <= 0.0 {
        Err(Error::ZeroMassKernel)
    } else {
        Ok(())
    }
}

/// Rows of a scenario run, before they are written.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: &'static str,
    pub rows: Vec<String>,
    /// First invariant or inequality violation, if any.
    pub violation: Option<Error>,
    pub threads: usize,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut text = String::with_capacity(64 * (self.rows.len() + 1));
        text.push_str(self.header);
        text.push('\n');
        for r in &self.rows {
            text.push_str(r);
            text.push('\n');
        }
        text
    }
}

/// Files written by a scenario run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub csv: PathBuf,
    pub meta: PathBuf,
    pub rows: usize,
}

#[derive(Serialize)]
struct Meta<'a> {
    scenario: &'a str,
    version: &'a str,
    config: BTreeMap<String, String>,
    config_text: String,
    config_sha256: String,
    master_seed: u64,
    replica_seeds: Vec<u64>,
    renormalize: bool,
    threads: usize,
    columns: Vec<&'a str>,
    csv: String,
}

/// Validates `cfg` and computes its table without touching the file system.
pub fn compute(cfg: &ExperimentConfig) -> Result<Table> {
    let diags = validate(cfg);
    if !diags.is_empty() {
        let lines: Vec<_> = diags.iter().map(|d| d.to_string()).collect();
        return Err(Error::Config(lines.join("; ")));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let (header, rows, outcome) = pool.install(|| produce(cfg))?;
    Ok(Table { header, rows, violation: outcome.err(), threads: pool.current_num_threads() })
}

/// Runs the scenario, writing `<scenario>.csv` and `meta.json` into
/// `cfg.out`. Fails on invalid configs and on any invariant or inequality
/// violation; the artifacts are still written in the latter case.
pub fn run_scenario(cfg: &ExperimentConfig) -> Result<RunReport> {
    let table = compute(cfg)?;
    fs::create_dir_all(&cfg.out).map_err(|e| Error::Io(format!("{}: {e}", cfg.out.display())))?;
    let csv_path = cfg.out.join(format!("{}.csv", cfg.scenario));
    fs::write(&csv_path, table.to_csv()).map_err(|e| Error::Io(format!("{}: {e}", csv_path.display())))?;

    let config_text = cfg.to_text();
    let config = config_text
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let meta = Meta {
        scenario: cfg.scenario.name(),
        version: env!("CARGO_PKG_VERSION"),
        config,
        config_sha256: cfg.hash(),
        config_text,
        master_seed: cfg.seed,
        replica_seeds: (0..cfg.replicas as u64).map(|k| derived_seed(cfg.seed, k)).collect(),
        renormalize: cfg.renormalize,
        threads: table.threads,
        columns: table.header.split(',').collect(),
        csv: format!("{}.csv", cfg.scenario),
    };
    let meta_path = cfg.out.join("meta.json");
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(&meta_path, json + "\n").map_err(|e| Error::Io(format!("{}: {e}", meta_path.display())))?;

    match table.violation {
        Some(e) => Err(e),
        None => Ok(RunReport { csv: csv_path, meta: meta_path, rows: table.rows.len() }),
    }
}

type Produced = (&'static str, Vec<String>, Result<()>);

fn produce(cfg: &ExperimentConfig) -> Result<Produced> {
    match cfg.scenario {
        Scenario::Decay | Scenario::CreationRate | Scenario::N2Rate => {
            let kernel = cfg.resolved_kernel()?;
            let (rows, outcome) = trajectories(cfg, &kernel);
            Ok((TRAJECTORY_HEADER, rows, outcome))
        }
        Scenario::EpsSweep => {
            let base = cfg.resolved_kernel()?;
            let mut all = Vec::new();
            for &eps in &cfg.eps_grid {
                let (rows, outcome) = trajectories(cfg, &base.with_cutoff(eps)?);
                all.extend(rows);
                if outcome.is_err() {
                    return Ok((TRAJECTORY_HEADER, all, outcome));
                }
            }
            Ok((TRAJECTORY_HEADER, all, Ok(())))
        }
        Scenario::FuzzFundineq => Ok(fuzz_fundineq(cfg)),
        Scenario::FuzzHolder => Ok(fuzz_holder(cfg)),
        Scenario::Counterexample => {
            let setup = CounterexampleSetup {
                n: cfg.particle_count(),
                d: cfg.d,
                replicas: cfg.replicas,
                seed: cfg.seed,
                q: cfg.q,
                shell: cfg.shell,
            };
            let rows = counterexample_report(cfg.counterexample, &cfg.grid, &setup)?
                .iter()
                .map(|r| {
                    format!(
                        "{},{},{},{},{},{},{},{},{},{}",
                        r.param1,
                        r.param2,
                        r.moment_q.value,
                        r.moment_q.std_error,
                        r.distance.value,
                        r.distance.std_error,
                        r.bracket.value,
                        r.bracket.std_error,
                        r.ratio.value,
                        r.ratio.std_error
                    )
                })
                .collect();
            Ok((COUNTEREXAMPLE_HEADER, rows, Ok(())))
        }
        Scenario::KappaWishart => {
            let mut rows = Vec::new();
            for (si, &n) in cfg.resolved_sizes().iter().enumerate() {
                let size_seed = derived_seed(cfg.seed, si as u64);
                let samples = (0..cfg.states)
                    .into_par_iter()
                    .map(|k| ParticleState::init_uniform(n, cfg.d, &mut replica_rng(size_seed, k as u64)))
                    .collect::<Result<Vec<_>>>()?;
                let m = modified_moment(&samples, cfg.p0, cfg.p)?;
                let target = gaussian_pair_moment(cfg.d, cfg.p);
                rows.push(format!(
                    "{n},{},{},{},{},{},{},{target}",
                    cfg.d, cfg.states, cfg.p0, cfg.p, m.value, m.std_error
                ));
            }
            Ok((WISHART_HEADER, rows, Ok(())))
        }
    }
}

/// `E(|G - G*|^p)^{1/p}` for i.i.d. `G ~ N(0, Id/d)`: `|G - G*|^2` is
/// `(2/d) chi^2_d`, so the moment is `(2/d)^{1/2} (2^{p/2} Gamma((d+p)/2) / Gamma(d/2))^{1/p}`.
pub fn gaussian_pair_moment(d: usize, p: f64) -> f64 {
    let d = d as f64;
    let log_chi = 0.5 * p * 2f64.ln() + ln_gamma(0.5 * (d + p)) - ln_gamma(0.5 * d);
    (2.0 / d).sqrt() * (log_chi / p).exp()
}

/// Lanczos approximation (g = 7, n = 9), relative error ~1e-15.
fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Forced `N = 2` coupled state: `u = (a, -a)`, `v = (b, -b)` with `a`, `b`
/// independent uniform unit vectors.
pub fn n2_state<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<CoupledState> {
    let pair = |rng: &mut R| -> Result<ParticleState> {
        let a = UnitVector::uniform(d, rng)?.into_inner();
        let mut flat = a.clone();
        flat.extend(a.iter().map(|x| -x));
        ParticleState::new(d, flat)
    };
    let u = pair(rng)?;
    let v = pair(rng)?;
    CoupledState::new(u, v)
}

/// Observables written on every trajectory row.
pub fn trajectory_row(
    cs: &CoupledState,
    kernel: &AngularKernel,
    replica: usize,
    time: f64,
    events: u64,
    policy: &PairPolicy,
) -> Result<String> {
    let (bracket, par) = bracket_and_parallelogram(cs, policy);
    let creation = kernel.levy_intensity() * wallis_ratio(cs.dim())? * bracket.value;
    let ku = kappa(&covariance(&cs.u))?;
    let kv = kappa(&covariance(&cs.v))?;
    Ok(format!(
        "{time},{replica},{},{},{},{},{creation},{},{ku},{kv},{},{},{},{},{events}",
        cs.len(),
        cs.dim(),
        kernel.cutoff(),
        crate::observables::coupling_distance(cs),
        par.value,
        p_moment_with(&cs.u, 3.0, policy).value,
        p_moment_with(&cs.u, 4.0, policy).value,
        p_moment_with(&cs.v, 3.0, policy).value,
        p_moment_with(&cs.v, 4.0, policy).value,
    ))
}

fn trajectories(cfg: &ExperimentConfig, kernel: &AngularKernel) -> (Vec<String>, Result<()>) {
    let n = cfg.particle_count();
    let mut options = match cfg.scenario {
        Scenario::CreationRate => RunOptions::at_times(cfg.t_end, vec![0.0, cfg.t_end / 2.0, cfg.t_end]),
        _ => RunOptions::uniform_grid(cfg.t_end, cfg.records),
    };
    options.record_every = cfg.record_every;
    options.renormalize = cfg.renormalize;
    let policy = PairPolicy { seed: cfg.seed, ..PairPolicy::default() };
    let per_replica: Vec<(Vec<String>, Result<()>)> = (0..cfg.replicas)
        .into_par_iter()
        .map(|k| {
            let mut rows = Vec::new();
            let mut rng = replica_rng(cfg.seed, k as u64);
            let state = if cfg.scenario == Scenario::N2Rate {
                n2_state(cfg.d, &mut rng)
            } else {
                let spec = CoupledSampleSpec::new(cfg.init.sample_kind(cfg.init_param), n, cfg.d, derived_seed(cfg.seed, k as u64));
                build(&spec)
            };
            let outcome = state.and_then(|mut cs| {
                run(&mut cs, kernel, &options, &mut rng, |point, s| {
                    rows.push(trajectory_row(s, kernel, k, point.time, point.events, &policy)?);
                    Ok(())
                })
                .map(|_| ())
            });
            let outcome = outcome.map_err(|e| match e {
                e if e.is_invariant_violation() => Error::Violation(format!("replica {k}: {e}")),
                e => e,
            });
            (rows, outcome)
        })
        .collect();
    let mut rows = Vec::new();
    let mut outcome = Ok(());
    for (r, o) in per_replica {
        rows.extend(r);
        if outcome.is_ok() {
            outcome = o;
        }
    }
    (rows, outcome)
}

fn kind_label(kind: &SampleKind) -> &'static str {
    match kind {
        SampleKind::Independent => "independent",
        SampleKind::Identity => "identity",
        SampleKind::ColinearIsotropic(_) => "colinear_isotropic",
        SampleKind::ColinearDesign(_) => "colinear_design",
        SampleKind::HeavyTail { .. } => "heavy_tail",
        SampleKind::RadialPerturbation { .. } => "radial_perturbation",
    }
}

fn fuzz_cases(cfg: &ExperimentConfig) -> Vec<(u64, CoupledSampleSpec)> {
    let sizes = cfg.resolved_sizes();
    (0..cfg.states as u64)
        .map(|case| {
            let n = sizes[case as usize % sizes.len()];
            (case, fuzz_spec(case, n, cfg.d, cfg.seed))
        })
        .collect()
}

fn first_violation(rows: &[(String, Option<String>)]) -> Result<()> {
    match rows.iter().find_map(|(_, v)| v.clone()) {
        Some(v) => Err(Error::Violation(v)),
        None => Ok(()),
    }
}

fn fuzz_fundineq(cfg: &ExperimentConfig) -> Produced {
    let results: Vec<Result<(String, Option<String>)>> = fuzz_cases(cfg)
        .into_par_iter()
        .map(|(case, spec)| {
            let cs = build(&spec)?;
            let s = sharp_inequality(&cs)?;
            let tol = FUZZ_TOLERANCE * (1.0 + s.lhs.abs());
            let violated = !s.holds(tol) || !s.holds_tight(tol);
            let row = format!(
                "{case},{},{},{},{},{},{},{},{},{}",
                kind_label(&spec.kind),
                spec.n,
                spec.d,
                s.lhs,
                s.kappa_min,
                s.parallelogram,
                s.rhs(),
                s.tight_rhs(),
                violated as u8
            );
            Ok((row.clone(), violated.then(|| format!("case {case}: {row}"))))
        })
        .collect();
    collect_fuzz(FUNDINEQ_HEADER, results)
}

fn fuzz_holder(cfg: &ExperimentConfig) -> Produced {
    let results: Vec<Result<Vec<(String, Option<String>)>>> = fuzz_cases(cfg)
        .into_par_iter()
        .map(|(case, spec)| {
            let cs = build(&spec)?;
            let mut rows = Vec::new();
            for &alpha in &cfg.alphas {
                for &p1 in &cfg.p1s {
                    let h = holder_bound(&cs, alpha, p1)?;
                    let violated = !h.holds(FUZZ_TOLERANCE);
                    let row = format!(
                        "{case},{},{},{},{alpha},{p1},{},{},{}",
                        kind_label(&spec.kind),
                        spec.n,
                        spec.d,
                        h.lhs,
                        h.rhs,
                        violated as u8
                    );
                    rows.push((row.clone(), violated.then(|| format!("case {case}: {row}"))));
                }
            }
            Ok(rows)
        })
        .collect();
    let flat = results.into_iter().map(|r| r.map(|v| v.into_iter())).collect::<Result<Vec<_>>>();
    match flat {
        Err(e) => (HOLDER_HEADER, Vec::new(), Err(e)),
        Ok(v) => collect_fuzz(HOLDER_HEADER, v.into_iter().flatten().map(Ok).collect()),
    }
}

fn collect_fuzz(header: &'static str, results: Vec<Result<(String, Option<String>)>>) -> Produced {
    match results.into_iter().collect::<Result<Vec<_>>>() {
        Err(e) => (header, Vec::new(), Err(e)),
        Ok(rows) => {
            let outcome = first_violation(&rows);
            (header, rows.into_iter().map(|(r, _)| r).collect(), outcome)
        }
    }
}
