//! Functionals of particle states and coupled states.
//!
//! Pair averages `<g(x, x*)>_N` run over all `N^2` ordered pairs, diagonal
//! included. Up to [`EXACT_PAIR_LIMIT`] particles they are exact; above it
//! they are estimated from uniformly subsampled pairs and carry a standard
//! error. Exact sums are accumulated row by row in index order, so results
//! do not depend on the number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::wallis_ratio;
use crate::kernels::AngularKernel;
use crate::linalg::Matrix;
use crate::particles::{CoupledState, ParticleState};
use crate::vecops::{dist_sq, dot, norm_sq};

pub const EXACT_PAIR_LIMIT: usize = 4096;
pub const SUBSAMPLED_PAIRS: usize = 1_000_000;
pub const HUNGARIAN_LIMIT: usize = 512;

/// Spectral radii at or above `1 - KAPPA_SINGULAR` give `kappa = +inf`.
pub const KAPPA_SINGULAR: f64 = 1e-13;

/// `C_{X,Y} = <x (x) y>_N`, a `d x d` matrix.
pub type CovMatrix = Matrix;

/// A value with its Monte Carlo standard error (0 for exact values).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, std_error: 0.0 }
    }

    /// Mean and standard error of the mean of `samples`.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        if samples.len() < 2 {
            return Self { value: mean, std_error: f64::NAN };
        }
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self { value: mean, std_error: (var / n).sqrt() }
    }

    pub fn scaled(self, factor: f64) -> Self {
        Self { value: self.value * factor, std_error: self.std_error * factor.abs() }
    }

    /// `g(value)` with the delta-method error for a differentiable `g`.
    fn map(self, g: impl Fn(f64) -> f64, dg: impl Fn(f64) -> f64) -> Self {
        Self { value: g(self.value), std_error: dg(self.value).abs() * self.std_error }
    }
}

/// How pair averages are evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairPolicy {
    /// Largest `N` with exact `O(N^2)` evaluation.
    pub exact_limit: usize,
    /// Number of sampled ordered pairs above the limit.
    pub pairs: usize,
    /// Seed of the pair sampler.
    pub seed: u64,
}

impl Default for PairPolicy {
    fn default() -> Self {
        Self { exact_limit: EXACT_PAIR_LIMIT, pairs: SUBSAMPLED_PAIRS, seed: 0 }
    }
}

/// `K` pair averages of a symmetric functional vanishing on the diagonal.
fn pair_means<const K: usize, F>(n: usize, policy: &PairPolicy, g: F) -> [Estimate; K]
where
    F: Fn(usize, usize) -> [f64; K] + Sync,
{
    if n <= policy.exact_limit {
        let rows: Vec<[f64; K]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut acc = [0.0; K];
                for j in i + 1..n {
                    let v = g(i, j);
                    for k in 0..K {
                        acc[k] += v[k];
                    }
                }
                acc
            })
            .collect();
        let mut total = [0.0; K];
        for row in &rows {
            for k in 0..K {
                total[k] += row[k];
            }
        }
        let norm = 2.0 / (n as f64 * n as f64);
        total.map(|t| Estimate::exact(t * norm))
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
        let m = policy.pairs.max(2);
        let mut sum = [0.0; K];
        let mut sum_sq = [0.0; K];
        for _ in 0..m {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i == j {
                continue;
            }
            let v = g(i, j);
            for k in 0..K {
                sum[k] += v[k];
                sum_sq[k] += v[k] * v[k];
            }
        }
        let mf = m as f64;
        let mut out = [Estimate::exact(0.0); K];
        for k in 0..K {
            let mean = sum[k] / mf;
            let var = (sum_sq[k] / mf - mean * mean).max(0.0) * mf / (mf - 1.0);
            out[k] = Estimate { value: mean, std_error: (var / mf).sqrt() };
        }
        out
    }
}

/// `<|u - v|^2>_N`.
pub fn coupling_distance(cs: &CoupledState) -> f64 {
    let n = cs.len();
    (0..n).map(|i| dist_sq(cs.u.velocity(i), cs.v.velocity(i))).sum::<f64>() / n as f64
}

/// Per-pair quantities of a coupled state: `(|du| |dv| - du.dv, |du|^2 |dv|^2 - (du.dv)^2)`.
fn pair_terms(cs: &CoupledState, i: usize, j: usize) -> [f64; 2] {
    let d = cs.dim();
    let (ui, uj, vi, vj) = (cs.u.velocity(i), cs.u.velocity(j), cs.v.velocity(i), cs.v.velocity(j));
    let (mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0);
    for k in 0..d {
        let a = ui[k] - uj[k];
        let b = vi[k] - vj[k];
        aa += a * a;
        bb += b * b;
        ab += a * b;
    }
    let bracket = ((aa * bb).sqrt() - ab).max(0.0);
    let area = (aa * bb - ab * ab).max(0.0);
    [bracket, area]
}

/// The misalignment bracket `<|du| |dv| - du . dv>_N` (no kernel factor).
pub fn creation_bracket(cs: &CoupledState) -> Estimate {
    creation_bracket_with(cs, &PairPolicy::default())
}

pub fn creation_bracket_with(cs: &CoupledState, policy: &PairPolicy) -> Estimate {
    let [b] = pair_means(cs.len(), policy, |i, j| [pair_terms(cs, i, j)[0]]);
    b
}

/// Coupling creation `lambda_eps (c_{d-1}/c_{d-3}) <|du| |dv| - du . dv>_N`,
/// the expected decrease rate of the coupling distance.
pub fn coupling_creation(cs: &CoupledState, kernel: &AngularKernel) -> Estimate {
    coupling_creation_with(cs, kernel, &PairPolicy::default())
}

pub fn coupling_creation_with(cs: &CoupledState, kernel: &AngularKernel, policy: &PairPolicy) -> Estimate {
    let ratio = wallis_ratio(cs.dim()).expect("state dimension is at least 3");
    creation_bracket_with(cs, policy).scaled(kernel.levy_intensity() * ratio)
}

/// Average squared parallelogram area `<|du|^2 |dv|^2 - (du . dv)^2>_N`.
pub fn parallelogram(cs: &CoupledState) -> Estimate {
    parallelogram_with(cs, &PairPolicy::default())
}

pub fn parallelogram_with(cs: &CoupledState, policy: &PairPolicy) -> Estimate {
    let [p] = pair_means(cs.len(), policy, |i, j| [pair_terms(cs, i, j)[1]]);
    p
}

/// Creation bracket and parallelogram in one pass.
pub fn bracket_and_parallelogram(cs: &CoupledState, policy: &PairPolicy) -> (Estimate, Estimate) {
    let [b, p] = pair_means(cs.len(), policy, |i, j| pair_terms(cs, i, j));
    (b, p)
}

fn cross_moment(a: &ParticleState, b: &ParticleState) -> CovMatrix {
    let d = a.dim();
    let mut m = Matrix::zeros(d);
    for (x, y) in a.velocities().zip(b.velocities()) {
        for r in 0..d {
            for c in 0..d {
                m[(r, c)] += x[r] * y[c];
            }
        }
    }
    m.scaled(1.0 / a.len() as f64)
}

/// `<v (x) v>_N`.
pub fn covariance(state: &ParticleState) -> CovMatrix {
    let mut c = cross_moment(state, state);
    // exact symmetry
    let d = c.dim();
    for r in 0..d {
        for s in r + 1..d {
            let m = 0.5 * (c[(r, s)] + c[(s, r)]);
            c[(r, s)] = m;
            c[(s, r)] = m;
        }
    }
    c
}

/// `<u (x) v>_N`, entry `(a, b)` being `<u_a v_b>_N`.
pub fn cross_covariance(cs: &CoupledState) -> CovMatrix {
    cross_moment(&cs.u, &cs.v)
}

/// Largest eigenvalue of a symmetric matrix.
pub fn spectral_radius(s: &CovMatrix) -> Result<f64> {
    let e = s.symmetric_eigenvalues()?;
    Ok(*e.last().expect("nonempty matrix"))
}

/// Condition number `1 / (1 - ||S||)`; `+inf` once `||S|| >= 1 - 1e-13`.
pub fn kappa(s: &CovMatrix) -> Result<f64> {
    let rho = spectral_radius(s)?;
    Ok(kappa_from_radius(rho))
}

fn kappa_from_radius(rho: f64) -> f64 {
    if rho >= 1.0 - KAPPA_SINGULAR {
        f64::INFINITY
    } else {
        1.0 / (1.0 - rho)
    }
}

/// `min(kappa_u, kappa_v)` for the two marginals.
pub fn kappa_min(cs: &CoupledState) -> Result<f64> {
    Ok(kappa(&covariance(&cs.u))?.min(kappa(&covariance(&cs.v))?))
}

/// `f(x) = x - x^2 / 4`.
pub fn f_func(x: f64) -> f64 {
    x - x * x / 4.0
}

/// `m_{x,p} = <|x - x*|^p>_N^{1/p}`.
pub fn p_moment(state: &ParticleState, p: f64) -> Estimate {
    p_moment_with(state, p, &PairPolicy::default())
}

pub fn p_moment_with(state: &ParticleState, p: f64, policy: &PairPolicy) -> Estimate {
    let [m] = pair_means(state.len(), policy, |i, j| {
        [dist_sq(state.velocity(i), state.velocity(j)).powf(0.5 * p)]
    });
    m.map(|x| x.powf(1.0 / p), |x| x.powf(1.0 / p - 1.0) / p)
}

/// Monte Carlo estimate over independent samples of
/// `((d-1)/d)^{p0/p} E(kappa^{p0} <|X - X*|^p>_N)^{1/p}`.
pub fn modified_moment(samples: &[ParticleState], p0: f64, p: f64) -> Result<Estimate> {
    let first = samples.first().ok_or_else(|| Error::InvalidSpec("no samples".into()))?;
    let d = first.dim() as f64;
    let policy = PairPolicy::default();
    let terms = samples
        .par_iter()
        .map(|s| -> Result<f64> {
            let k = kappa(&covariance(s))?;
            let [m] = pair_means(s.len(), &policy, |i, j| {
                [dist_sq(s.velocity(i), s.velocity(j)).powf(0.5 * p)]
            });
            Ok(k.powf(p0) * m.value)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = Estimate::from_samples(&terms);
    let factor = ((d - 1.0) / d).powf(p0 / p);
    Ok(mean.map(|x| factor * x.powf(1.0 / p), |x| factor * x.powf(1.0 / p - 1.0) / p))
}

/// `k_alpha = (1 + alpha) (2 / (2 + alpha))^{(2 + alpha)/(1 + alpha)}`.
pub fn holder_constant(alpha: f64) -> f64 {
    (1.0 + alpha) * (2.0 / (2.0 + alpha)).powf((2.0 + alpha) / (1.0 + alpha))
}

/// The three terms of the parallelogram decomposition for centered states:
/// `2 pointwise + antisymmetric + 2 trace_gap`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    /// `<|u|^2 |v|^2 - (u . v)^2>_N`
    pub pointwise: f64,
    /// `Tr((C_UV - C_VU)(C_VU - C_UV))`
    pub antisymmetric: f64,
    /// `Tr C_UU Tr C_VV - (Tr C_UV)^2 - Tr(C_UU C_VV) + Tr(C_UV C_VU)`
    pub trace_gap: f64,
}

impl Decomposition {
    pub fn total(&self) -> f64 {
        2.0 * self.pointwise + self.antisymmetric + 2.0 * self.trace_gap
    }
}

/// Computes the decomposition from single-particle averages and covariances
/// only (no pair sums).
pub fn decomposition(cs: &CoupledState) -> Decomposition {
    let n = cs.len() as f64;
    let pointwise = cs
        .u
        .velocities()
        .zip(cs.v.velocities())
        .map(|(u, v)| {
            let uv = dot(u, v);
            norm_sq(u) * norm_sq(v) - uv * uv
        })
        .sum::<f64>()
        / n;
    let cuu = covariance(&cs.u);
    let cvv = covariance(&cs.v);
    let cuv = cross_covariance(cs);
    let cvu = cuv.transpose();
    let a = cuv.sub(&cvu);
    let antisymmetric = a.trace_product(&cvu.sub(&cuv));
    let trace_gap = cuu.trace() * cvv.trace() - cuv.trace().powi(2) - cuu.trace_product(&cvv)
        + cuv.trace_product(&cvu);
    Decomposition { pointwise, antisymmetric, trace_gap }
}

/// Both sides of the trace inequality
/// `Tr(C_UU C_VV) - Tr(C_UV C_VU) <= rho (Tr C_UU Tr C_VV - (Tr C_UV)^2)`
/// with `rho = min(||C_UU|| / Tr C_UU, ||C_VV|| / Tr C_VV)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceInequality {
    pub lhs: f64,
    pub rhs: f64,
    pub rho: f64,
}

pub fn trace_inequality(cs: &CoupledState) -> Result<TraceInequality> {
    let cuu = covariance(&cs.u);
    let cvv = covariance(&cs.v);
    let cuv = cross_covariance(cs);
    let cvu = cuv.transpose();
    let lhs = cuu.trace_product(&cvv) - cuv.trace_product(&cvu);
    let rho = (spectral_radius(&cuu)? / cuu.trace()).min(spectral_radius(&cvv)? / cvv.trace());
    let rhs = rho * (cuu.trace() * cvv.trace() - cuv.trace().powi(2));
    Ok(TraceInequality { lhs, rhs, rho })
}

/// Both sides of `f(D) <= min(kappa_u, kappa_v) * parallelogram`.
///
/// The pair expansion of the parallelogram actually gives the tighter
/// `f(D) <= (kappa_min / 2) * parallelogram`, which is an equality for
/// isotropic colinear couplings; see [`SharpInequality::tight_rhs`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharpInequality {
    pub lhs: f64,
    pub kappa_min: f64,
    pub parallelogram: f64,
}

fn relative(lhs: f64, rhs: f64) -> f64 {
    let scale = lhs.abs().max(rhs.abs());
    if scale == 0.0 {
        0.0
    } else {
        (rhs - lhs) / scale
    }
}

impl SharpInequality {
    pub fn rhs(&self) -> f64 {
        if self.parallelogram == 0.0 && self.kappa_min.is_infinite() {
            return f64::INFINITY;
        }
        self.kappa_min * self.parallelogram
    }

    /// `(kappa_min / 2) * parallelogram`.
    pub fn tight_rhs(&self) -> f64 {
        self.rhs() / 2.0
    }

    /// `rhs - lhs`, relative to `max(lhs, rhs)`.
    pub fn relative_gap(&self) -> f64 {
        relative(self.lhs, self.rhs())
    }

    /// `tight_rhs - lhs`, relative to `max(lhs, tight_rhs)`.
    pub fn tight_gap(&self) -> f64 {
        relative(self.lhs, self.tight_rhs())
    }

    pub fn holds(&self, tol: f64) -> bool {
        self.lhs <= self.rhs() + tol
    }

    pub fn holds_tight(&self, tol: f64) -> bool {
        self.lhs <= self.tight_rhs() + tol
    }
}

pub fn sharp_inequality(cs: &CoupledState) -> Result<SharpInequality> {
    sharp_inequality_with(cs, &PairPolicy::default())
}

pub fn sharp_inequality_with(cs: &CoupledState, policy: &PairPolicy) -> Result<SharpInequality> {
    Ok(SharpInequality {
        lhs: f_func(coupling_distance(cs)),
        kappa_min: kappa_min(cs)?,
        parallelogram: parallelogram_with(cs, policy).value,
    })
}

/// The Holder quasi-contraction bound in product form:
/// `f(D) <= k_alpha kappa_min m_{u, p1(2+a)}^{e} m_{v, p2(2+a)}^{e} <A_->^{a/(1+a)}`
/// with `e = (2+a)/(1+a)` and `1/p1 + 1/p2 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderBound {
    pub alpha: f64,
    pub p1: f64,
    pub lhs: f64,
    pub rhs: f64,
}

impl HolderBound {
    pub fn holds(&self, rel_tol: f64) -> bool {
        self.lhs <= self.rhs * (1.0 + rel_tol) + rel_tol
    }
}

pub fn holder_bound(cs: &CoupledState, alpha: f64, p1: f64) -> Result<HolderBound> {
    if !(alpha > 0.0) || !(p1 > 1.0) {
        return Err(Error::InvalidSpec(format!("need alpha > 0 and p1 > 1, got {alpha}, {p1}")));
    }
    let p2 = p1 / (p1 - 1.0);
    let e = (2.0 + alpha) / (1.0 + alpha);
    let policy = PairPolicy::default();
    let bracket = creation_bracket_with(cs, &policy).value;
    let mu = p_moment_with(&cs.u, p1 * (2.0 + alpha), &policy).value;
    let mv = p_moment_with(&cs.v, p2 * (2.0 + alpha), &policy).value;
    let k = kappa_min(cs)?;
    let lhs = f_func(coupling_distance(cs));
    let rhs = holder_constant(alpha) * k * mu.powf(e) * mv.powf(e) * bracket.powf(alpha / (1.0 + alpha));
    Ok(HolderBound { alpha, p1, lhs, rhs })
}

/// Empirical (orbifold) Wasserstein-2 distance
/// `min_sigma <|a - b_sigma|^2>_N`, by exact assignment.
pub fn wasserstein2_empirical(a: &ParticleState, b: &ParticleState) -> Result<f64> {
    wasserstein2_empirical_with_limit(a, b, HUNGARIAN_LIMIT)
}

pub fn wasserstein2_empirical_with_limit(a: &ParticleState, b: &ParticleState, limit: usize) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch(a.len(), b.len()));
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    let n = a.len();
    if n > limit {
        return Err(Error::TooLarge { n, limit });
    }
    let cost: Vec<f64> = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| dist_sq(a.velocity(i), b.velocity(j)))
        .collect();
    let assignment = hungarian(&cost, n);
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok(total / n as f64)
}

/// Minimum-cost perfect assignment on a dense `n x n` cost matrix
/// (shortest augmenting paths with potentials). Returns the column of each row.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
    }
    row_to_col
}
