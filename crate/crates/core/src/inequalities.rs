//! Builders for structured and adversarial coupled states, and the tables of
//! the two counterexample families.
//!
//! Every build is deterministic given its seed and satisfies the
//! conservation laws exactly (up to rounding) in both copies.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{check_dim, UnitVector};
use crate::observables::{coupling_distance, creation_bracket, f_func, Estimate};
use crate::particles::{CoupledState, ParticleState};
use crate::seeds::derived_seed;
use crate::vecops::{axpy, dot, gaussian, norm, scale};

/// Radial map `r(|u|)` of colinear couplings: `r(x) = x^p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialProfile {
    pub exponent: f64,
}

impl RadialProfile {
    pub fn power(exponent: f64) -> Self {
        Self { exponent }
    }

    pub fn apply(&self, x: f64) -> f64 {
        x.powf(self.exponent)
    }
}

impl Default for RadialProfile {
    fn default() -> Self {
        Self { exponent: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SampleKind {
    /// Two independent uniform states.
    Independent,
    /// `v = u`.
    Identity,
    /// `u` uniform, `v_n = r(|u_n|) u_n / |u_n|`, then re-projected.
    /// Isotropy holds only up to sampling error.
    ColinearIsotropic(RadialProfile),
    /// Exactly isotropic colinear design: blocks of `2^d` randomly rotated
    /// cube vertices `(+-1, ..., +-1)/sqrt(d)`, one radius per block, and
    /// `v = r(radius)` along the same direction. Needs `N` divisible by `2^d`.
    ColinearDesign(RadialProfile),
    /// `u` uniform and independent; `v_n = R theta_n` with probability
    /// `1/R^2` (conditioned on at least one hit), else 0, then re-projected.
    HeavyTail { r: f64 },
    /// `v` colinear with `u`; `|v| = |u|` outside `[r_minus, r_plus]` and
    /// the conditional root mean square of `|u|` inside. `shell` particles
    /// (antipodal pairs, radii uniform in the window) are planted in `u`
    /// so the window is populated at moderate `N`.
    RadialPerturbation { r_minus: f64, r_plus: f64, shell: usize },
}

impl fmt::Display for SampleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleKind::Independent => write!(f, "independent"),
            SampleKind::Identity => write!(f, "identity"),
            SampleKind::ColinearIsotropic(p) => write!(f, "colinear_isotropic(p={})", p.exponent),
            SampleKind::ColinearDesign(p) => write!(f, "colinear_design(p={})", p.exponent),
            SampleKind::HeavyTail { r } => write!(f, "heavy_tail(R={r})"),
            SampleKind::RadialPerturbation { r_minus, r_plus, shell } => {
                write!(f, "radial_perturbation({r_minus}, {r_plus}, shell={shell})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledSampleSpec {
    pub kind: SampleKind,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
}

impl CoupledSampleSpec {
    pub fn new(kind: SampleKind, n: usize, d: usize, seed: u64) -> Self {
        Self { kind, n, d, seed }
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.d)?;
        if self.n < 2 {
            return Err(Error::TooFewParticles { min: 2, got: self.n });
        }
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        match &self.kind {
            SampleKind::HeavyTail { r } if !(*r > 1.0 && r.is_finite()) => bad(format!("heavy_tail needs R > 1, got {r}")),
            SampleKind::RadialPerturbation { r_minus, r_plus, shell } => {
                if !(*r_minus > 0.0 && r_minus < r_plus && r_plus.is_finite()) {
                    bad(format!("radial window needs 0 < r- < r+, got [{r_minus}, {r_plus}]"))
                } else if shell % 2 != 0 || *shell + 2 > self.n {
                    bad(format!("shell size must be even and at most N - 2, got {shell}"))
                } else {
                    Ok(())
                }
            }
            SampleKind::ColinearDesign(_) => {
                let block = 1usize.checked_shl(self.d as u32).unwrap_or(usize::MAX);
                if self.n % block != 0 {
                    bad(format!("colinear_design needs N divisible by 2^d = {block}, got {}", self.n))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Builds the coupled state described by `spec`.
pub fn build(spec: &CoupledSampleSpec) -> Result<CoupledState> {
    spec.validate()?;
    let (n, d) = (spec.n, spec.d);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match &spec.kind {
        SampleKind::Independent => {
            let u = ParticleState::init_uniform(n, d, &mut rng)?;
            let v = ParticleState::init_uniform(n, d, &mut rng)?;
            CoupledState::new(u, v)
        }
        SampleKind::Identity => Ok(CoupledState::identical(ParticleState::init_uniform(n, d, &mut rng)?)),
        SampleKind::ColinearIsotropic(profile) => {
            let u = ParticleState::init_uniform(n, d, &mut rng)?;
            let v = radial_map(&u, |r| profile.apply(r));
            CoupledState::new(u, ParticleState::projected(d, v)?)
        }
        SampleKind::ColinearDesign(profile) => colinear_design(n, d, profile, &mut rng),
        SampleKind::HeavyTail { r } => heavy_tail(n, d, *r, &mut rng),
        SampleKind::RadialPerturbation { r_minus, r_plus, shell } => {
            radial_perturbation(n, d, *r_minus, *r_plus, *shell, &mut rng)
        }
    }
}

/// `v_n = g(|u_n|) u_n / |u_n|` (zero where `u_n = 0`).
fn radial_map(u: &ParticleState, g: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(u.as_flat().len());
    for x in u.velocities() {
        let r = norm(x);
        let s = if r > 0.0 { g(r) / r } else { 0.0 };
        out.extend(x.iter().map(|c| c * s));
    }
    out
}

/// Haar-distributed orthogonal matrix, as rows, by Gram-Schmidt on
/// Gaussian vectors.
fn random_rotation<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    while rows.len() < d {
        let mut g = gaussian(d, rng);
        for _ in 0..2 {
            for b in &rows {
                let c = dot(&g, b);
                axpy(-c, b, &mut g);
            }
        }
        let r = norm(&g);
        if r > 1e-8 {
            scale(1.0 / r, &mut g);
            rows.push(g);
        }
    }
    rows
}

fn colinear_design<R: Rng + ?Sized>(n: usize, d: usize, profile: &RadialProfile, rng: &mut R) -> Result<CoupledState> {
    let block = 1usize << d;
    let inv = 1.0 / (d as f64).sqrt();
    let vertices: Vec<Vec<f64>> = (0..block)
        .map(|mask| (0..d).map(|k| if mask >> k & 1 == 1 { inv } else { -inv }).collect())
        .collect();
    let mut u = Vec::with_capacity(n * d);
    let mut v = Vec::with_capacity(n * d);
    for _ in 0..n / block {
        let rot = random_rotation(d, rng);
        let a = norm(&gaussian(d, rng)) / (d as f64).sqrt();
        let b = profile.apply(a);
        for w in &vertices {
            // rotated vertex R^T w
            let mut x = vec![0.0; d];
            for (wk, row) in w.iter().zip(&rot) {
                axpy(*wk, row, &mut x);
            }
            u.extend(x.iter().map(|c| a * c));
            v.extend(x.iter().map(|c| b * c));
        }
    }
    CoupledState::new(ParticleState::projected(d, u)?, ParticleState::projected(d, v)?)
}

fn heavy_tail<R: Rng + ?Sized>(n: usize, d: usize, big_r: f64, rng: &mut R) -> Result<CoupledState> {
    let u = ParticleState::init_uniform(n, d, rng)?;
    let p = 1.0 / (big_r * big_r);
    loop {
        let mut v = vec![0.0; n * d];
        let mut hits = 0;
        for i in 0..n {
            if rng.random::<f64>() < p {
                let theta = UnitVector::uniform(d, rng)?;
                for (k, c) in theta.iter().enumerate() {
                    v[i * d + k] = big_r * c;
                }
                hits += 1;
            }
        }
        if hits > 0 {
            return CoupledState::new(u, ParticleState::projected(d, v)?);
        }
    }
}

fn radial_perturbation<R: Rng + ?Sized>(
    n: usize,
    d: usize,
    r_minus: f64,
    r_plus: f64,
    shell: usize,
    rng: &mut R,
) -> Result<CoupledState> {
    let u = if shell == 0 {
        ParticleState::init_uniform(n, d, rng)?
    } else {
        let mut planted = Vec::with_capacity(shell * d);
        for _ in 0..shell / 2 {
            let rho = r_minus + (r_plus - r_minus) * rng.random::<f64>();
            let theta = UnitVector::uniform(d, rng)?;
            planted.extend(theta.iter().map(|c| rho * c));
            planted.extend(theta.iter().map(|c| -rho * c));
        }
        let planted_energy: f64 = planted.iter().map(|x| x * x).sum();
        let bulk_n = n - shell;
        let bulk_energy = n as f64 - planted_energy;
        if bulk_energy <= 0.0 {
            return Err(Error::InvalidSpec(format!(
                "planted shell carries energy {planted_energy:.3} > N = {n}; increase N or decrease the shell"
            )));
        }
        let bulk = ParticleState::init_uniform(bulk_n, d, rng)?;
        let s = (bulk_energy / bulk_n as f64).sqrt();
        let mut all: Vec<f64> = bulk.as_flat().iter().map(|x| x * s).collect();
        all.extend(planted);
        ParticleState::projected(d, all)?
    };
    let inside: Vec<f64> = u.velocities().map(norm).filter(|r| (r_minus..=r_plus).contains(r)).collect();
    if inside.is_empty() {
        return Err(Error::EmptyWindow { r_minus, r_plus });
    }
    let rms = (inside.iter().map(|r| r * r).sum::<f64>() / inside.len() as f64).sqrt();
    let v = radial_map(&u, |r| if (r_minus..=r_plus).contains(&r) { rms } else { r });
    CoupledState::new(u, ParticleState::projected(d, v)?)
}

/// Fuzz case `case`: cycles through every builder kind with randomized
/// parameters. Colinear designs fall back to `ColinearIsotropic` when `N`
/// is not a multiple of `2^d`.
pub fn fuzz_spec(case: u64, n: usize, d: usize, seed: u64) -> CoupledSampleSpec {
    let case_seed = derived_seed(seed, case);
    let mut rng = ChaCha8Rng::seed_from_u64(case_seed ^ 0x5eed);
    let profile = RadialProfile::power(rng.random_range(0.25..3.0));
    let kind = match case % 6 {
        0 => SampleKind::Independent,
        1 => SampleKind::Identity,
        2 => SampleKind::ColinearIsotropic(profile),
        3 if n % (1usize << d.min(60)) == 0 => SampleKind::ColinearDesign(profile),
        3 => SampleKind::ColinearIsotropic(profile),
        4 => SampleKind::HeavyTail { r: rng.random_range(1.5..8.0) },
        _ => {
            let r_minus = rng.random_range(0.3..1.5);
            SampleKind::RadialPerturbation { r_minus, r_plus: r_minus + 0.3, shell: 2 }
        }
    };
    CoupledSampleSpec::new(kind, n, d, case_seed)
}

/// `f(E|U - V|^2) / E bracket`, with `NaN` for `0/0`.
pub fn coupling_ratio(distance: f64, bracket: f64) -> f64 {
    let num = f_func(distance);
    if bracket == 0.0 && num.abs() == 0.0 {
        f64::NAN
    } else {
        num / bracket
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CounterexampleKind {
    HeavyTail,
    Radial,
}

impl std::str::FromStr for CounterexampleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heavy_tail" => Ok(Self::HeavyTail),
            "radial" => Ok(Self::Radial),
            other => Err(Error::Config(format!("unknown counterexample kind '{other}' (heavy_tail | radial)"))),
        }
    }
}

impl fmt::Display for CounterexampleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::HeavyTail => "heavy_tail",
            Self::Radial => "radial",
        })
    }
}

/// Sizes and seeds of a counterexample table.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleSetup {
    pub n: usize,
    pub d: usize,
    pub replicas: usize,
    pub seed: u64,
    /// Order of the `V` moment reported for heavy tails.
    pub q: f64,
    /// Planted shell size for radial windows.
    pub shell: usize,
}

impl Default for CounterexampleSetup {
    fn default() -> Self {
        Self { n: 4096, d: 3, replicas: 64, seed: 0, q: 1.0, shell: 64 }
    }
}

/// One row of a counterexample table. For heavy tails `param1 = R` and
/// `param2 = q`; for radial windows `(param1, param2) = (r_minus, r_plus)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterexampleRow {
    pub param1: f64,
    pub param2: f64,
    /// `E(|V|^q)^{1/q}` (heavy tails only, else NaN).
    pub moment_q: Estimate,
    /// `E <|U - V|^2>_N`.
    pub distance: Estimate,
    /// `E <|du| |dv| - du . dv>_N`.
    pub bracket: Estimate,
    /// `f(distance) / bracket`, NaN for `0/0`.
    pub ratio: Estimate,
}

/// Builds `replicas` states per grid point and tabulates the averages.
/// For heavy tails each grid entry is `(R, _)`; for radial windows it is
/// `(r_minus, r_plus)`.
pub fn counterexample_report(
    kind: CounterexampleKind,
    grid: &[(f64, f64)],
    setup: &CounterexampleSetup,
) -> Result<Vec<CounterexampleRow>> {
    grid.iter()
        .enumerate()
        .map(|(g, &(p1, p2))| {
            let sample_kind = match kind {
                CounterexampleKind::HeavyTail => SampleKind::HeavyTail { r: p1 },
                CounterexampleKind::Radial => {
                    SampleKind::RadialPerturbation { r_minus: p1, r_plus: p2, shell: setup.shell }
                }
            };
            let grid_seed = derived_seed(setup.seed, g as u64);
            let per_replica = (0..setup.replicas)
                .into_par_iter()
                .map(|k| -> Result<[f64; 3]> {
                    let spec = CoupledSampleSpec::new(sample_kind.clone(), setup.n, setup.d, derived_seed(grid_seed, k as u64));
                    let cs = build(&spec)?;
                    let mq = cs.v.velocities().map(|x| norm(x).powf(setup.q)).sum::<f64>() / cs.len() as f64;
                    Ok([coupling_distance(&cs), creation_bracket(&cs).value, mq])
                })
                .collect::<Result<Vec<_>>>()?;
            let column = |i: usize| Estimate::from_samples(&per_replica.iter().map(|r| r[i]).collect::<Vec<_>>());
            let distance = column(0);
            let bracket = column(1);
            let moment_q = match kind {
                CounterexampleKind::HeavyTail => {
                    let m = column(2);
                    let q = setup.q;
                    Estimate { value: m.value.powf(1.0 / q), std_error: m.value.powf(1.0 / q - 1.0) / q * m.std_error }
                }
                CounterexampleKind::Radial => Estimate { value: f64::NAN, std_error: f64::NAN },
            };
            let value = coupling_ratio(distance.value, bracket.value);
            let df = 1.0 - distance.value / 2.0;
            let std_error = ((df * distance.std_error / bracket.value).powi(2)
                + (f_func(distance.value) * bracket.std_error / bracket.value.powi(2)).powi(2))
            .sqrt();
            let param2 = match kind {
                CounterexampleKind::HeavyTail => setup.q,
                CounterexampleKind::Radial => p2,
            };
            Ok(CounterexampleRow {
                param1: p1,
                param2,
                moment_q,
                distance,
                bracket,
                ratio: Estimate { value, std_error },
            })
        })
        .collect()
}
