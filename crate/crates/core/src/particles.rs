//! The conservative Nanbu N-particle system, its spherically coupled twin,
//! and exact event-driven (Gillespie) time evolution under Grad's cut-off.
//!
//! Particle indices are 0-based. Every pair average `<.>_N` runs over all
//! `N^2` ordered pairs, diagonal included.

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::geometry::{check_dim, coupled_step, isotropic_step, UnitVector};
use crate::kernels::AngularKernel;
use crate::vecops::{dist_sq, dot, gaussian, norm, norm_sq, sub};

/// Tolerance on the conservation laws accepted when building a state.
pub const CONSERVATION_TOLERANCE: f64 = 1e-9;

/// Conservation drift that aborts a run.
pub const DRIFT_TOLERANCE: f64 = 1e-6;

/// Relative slack of the event-by-event monotonicity check.
pub const MONOTONICITY_SLACK: f64 = 1e-12;

/// `N` velocities in `R^d` with zero mean and unit mean energy.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    d: usize,
    velocities: Vec<f64>,
    time: f64,
}

impl ParticleState {
    /// Wraps row-major velocities (`N * d` numbers) that already satisfy
    /// `<v>_N = 0` and `<|v|^2>_N = 1` within [`CONSERVATION_TOLERANCE`].
    pub fn new(d: usize, velocities: Vec<f64>) -> Result<Self> {
        let state = Self::unchecked(d, velocities)?;
        let (momentum, energy) = state.residuals();
        if momentum > CONSERVATION_TOLERANCE || energy > CONSERVATION_TOLERANCE {
            return Err(Error::Conservation { momentum, energy });
        }
        Ok(state)
    }

    /// Centers and rescales arbitrary velocities onto the conservation sphere.
    pub fn projected(d: usize, velocities: Vec<f64>) -> Result<Self> {
        let mut state = Self::unchecked(d, velocities)?;
        if !state.project() {
            return Err(Error::Conservation { momentum: 0.0, energy: 1.0 });
        }
        Ok(state)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
        }
        Self::new(d, rows.concat())
    }

    fn unchecked(d: usize, velocities: Vec<f64>) -> Result<Self> {
        check_dim(d)?;
        if velocities.len() % d != 0 {
            return Err(Error::DimensionMismatch { expected: d, got: velocities.len() % d });
        }
        let n = velocities.len() / d;
        if n < 2 {
            return Err(Error::TooFewParticles { min: 2, got: n });
        }
        Ok(Self { d, velocities, time: 0.0 })
    }

    /// Exact sample of the uniform law on the conservation sphere: centered
    /// i.i.d. Gaussians rescaled to unit mean energy.
    pub fn init_uniform<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Result<Self> {
        check_dim(d)?;
        if n < 2 {
            return Err(Error::TooFewParticles { min: 2, got: n });
        }
        loop {
            let mut state = Self { d, velocities: gaussian(n * d, rng), time: 0.0 };
            if state.project() {
                return Ok(state);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.velocities.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.velocities.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn set_time(&mut self, t: f64) {
        self.time = t;
    }

    pub fn velocity(&self, i: usize) -> &[f64] {
        &self.velocities[i * self.d..(i + 1) * self.d]
    }

    pub fn velocities(&self) -> impl Iterator<Item = &[f64]> {
        self.velocities.chunks_exact(self.d)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.velocities
    }

    /// `<v>_N`.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for v in self.velocities() {
            for (mi, vi) in m.iter_mut().zip(v) {
                *mi += vi;
            }
        }
        let n = self.len() as f64;
        m.iter().map(|x| x / n).collect()
    }

    /// `<|v|^2>_N`.
    pub fn energy(&self) -> f64 {
        norm_sq(&self.velocities) / self.len() as f64
    }

    /// `(max_k |<v_k>_N|, |<|v|^2>_N - 1|)`.
    pub fn residuals(&self) -> (f64, f64) {
        let momentum = self.mean().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        (momentum, (self.energy() - 1.0).abs())
    }

    /// Re-projects onto the conservation sphere. Returns `false` (leaving the
    /// state centered but unscaled) if all velocities coincide.
    pub fn project(&mut self) -> bool {
        let mean = self.mean();
        for v in self.velocities.chunks_exact_mut(self.d) {
            for (vi, mi) in v.iter_mut().zip(&mean) {
                *vi -= mi;
            }
        }
        let e = self.energy();
        if !(e > 0.0) || !e.is_finite() {
            return false;
        }
        let s = 1.0 / e.sqrt();
        self.velocities.iter_mut().for_each(|x| *x *= s);
        true
    }

    /// The state with particle `i` moved to slot `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.len());
        let mut out = self.clone();
        for (i, &p) in perm.iter().enumerate() {
            out.velocities[p * self.d..(p + 1) * self.d].copy_from_slice(self.velocity(i));
        }
        out
    }

    fn set_pair(&mut self, i: usize, j: usize, vi: &[f64], vj: &[f64]) {
        let d = self.d;
        self.velocities[i * d..(i + 1) * d].copy_from_slice(vi);
        self.velocities[j * d..(j + 1) * d].copy_from_slice(vj);
    }

    /// Uncoupled collision of particles `i` and `j` with scattering angle
    /// `theta`. No-op when `i == j` or the velocities coincide.
    pub fn collide<R: Rng + ?Sized>(&mut self, i: usize, j: usize, theta: f64, rng: &mut R) {
        if i == j {
            return;
        }
        let Some(n) = direction(self.velocity(i), self.velocity(j)) else {
            return;
        };
        let n_prime = isotropic_step(&n, theta, rng);
        let (vi, vj) = collide_pair(self.velocity(i), self.velocity(j), &n_prime);
        self.set_pair(i, j, &vi, &vj);
    }
}

/// Two copies of the particle system sharing one particle indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledState {
    pub u: ParticleState,
    pub v: ParticleState,
}

impl CoupledState {
    pub fn new(u: ParticleState, mut v: ParticleState) -> Result<Self> {
        if u.dim() != v.dim() {
            return Err(Error::DimensionMismatch { expected: u.dim(), got: v.dim() });
        }
        if u.len() != v.len() {
            return Err(Error::SizeMismatch(u.len(), v.len()));
        }
        v.time = u.time;
        Ok(Self { u, v })
    }

    /// The identity coupling `v = u`.
    pub fn identical(u: ParticleState) -> Self {
        Self { v: u.clone(), u }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.u.dim()
    }

    pub fn time(&self) -> f64 {
        self.u.time
    }

    /// `|u_i - v_i|^2 + |u_j - v_j|^2` (one term if `i == j`).
    pub fn pair_distance(&self, i: usize, j: usize) -> f64 {
        let di = dist_sq(self.u.velocity(i), self.v.velocity(i));
        if i == j {
            di
        } else {
            di + dist_sq(self.u.velocity(j), self.v.velocity(j))
        }
    }

    /// Spherically coupled collision of the pair `(i, j)` in both copies.
    /// Returns the shared azimuthal angle when a coupled step took place.
    pub fn collide<R: Rng + ?Sized>(&mut self, i: usize, j: usize, theta: f64, rng: &mut R) -> Option<f64> {
        if i == j {
            return None;
        }
        let out = coupled_collide(
            self.u.velocity(i),
            self.u.velocity(j),
            self.v.velocity(i),
            self.v.velocity(j),
            theta,
            rng,
        );
        self.u.set_pair(i, j, &out.u, &out.u_star);
        self.v.set_pair(i, j, &out.v, &out.v_star);
        out.phi
    }
}

fn direction(v: &[f64], v_star: &[f64]) -> Option<UnitVector> {
    let diff = sub(v, v_star);
    let r = norm(&diff);
    if r > 0.0 && r.is_finite() {
        Some(UnitVector::normalize(diff).expect("dimension checked at construction"))
    } else {
        None
    }
}

/// The collision map `v' = (v + v*)/2 + |v - v*| n'/2`,
/// `v*' = (v + v*)/2 - |v - v*| n'/2`. Returns the inputs when `v = v*`.
pub fn collide_pair(v: &[f64], v_star: &[f64], n_prime: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let r = dist_sq(v, v_star).sqrt();
    if r == 0.0 {
        return (v.to_vec(), v_star.to_vec());
    }
    let half = 0.5 * r;
    let mut a = Vec::with_capacity(v.len());
    let mut b = Vec::with_capacity(v.len());
    for ((x, y), n) in v.iter().zip(v_star).zip(n_prime) {
        let mid = 0.5 * (x + y);
        a.push(mid + half * n);
        b.push(mid - half * n);
    }
    (a, b)
}

/// Post-collisional velocities of a coupled collision.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledCollision {
    pub u: Vec<f64>,
    pub u_star: Vec<f64>,
    pub v: Vec<f64>,
    pub v_star: Vec<f64>,
    /// `None` when at least one copy had coinciding velocities.
    pub phi: Option<f64>,
}

/// Coupled collision with shared angle `theta`.
///
/// When both relative velocities are nonzero, the post-collisional
/// directions come from one [`coupled_step`]. When exactly one copy has
/// coinciding velocities, that copy is left unchanged and the other performs
/// an uncoupled isotropic step.
pub fn coupled_collide<R: Rng + ?Sized>(
    u: &[f64],
    u_star: &[f64],
    v: &[f64],
    v_star: &[f64],
    theta: f64,
    rng: &mut R,
) -> CoupledCollision {
    let unchanged = |a: &[f64], b: &[f64]| (a.to_vec(), b.to_vec());
    match (direction(u, u_star), direction(v, v_star)) {
        (Some(n_u), Some(n_v)) => {
            let step = coupled_step(&n_u, &n_v, theta, rng);
            let (u1, u2) = collide_pair(u, u_star, &step.n_u);
            let (v1, v2) = collide_pair(v, v_star, &step.n_v);
            CoupledCollision { u: u1, u_star: u2, v: v1, v_star: v2, phi: Some(step.phi) }
        }
        (Some(n_u), None) => {
            let (u1, u2) = collide_pair(u, u_star, &isotropic_step(&n_u, theta, rng));
            let (v1, v2) = unchanged(v, v_star);
            CoupledCollision { u: u1, u_star: u2, v: v1, v_star: v2, phi: None }
        }
        (None, Some(n_v)) => {
            let (u1, u2) = unchanged(u, u_star);
            let (v1, v2) = collide_pair(v, v_star, &isotropic_step(&n_v, theta, rng));
            CoupledCollision { u: u1, u_star: u2, v: v1, v_star: v2, phi: None }
        }
        (None, None) => {
            let (u1, u2) = unchanged(u, u_star);
            let (v1, v2) = unchanged(v, v_star);
            CoupledCollision { u: u1, u_star: u2, v: v1, v_star: v2, phi: None }
        }
    }
}

/// The pathwise change predicted for a coupled collision:
/// `-sin^2(theta) sin^2(phi) (|du| |dv| - du . dv)`.
pub fn predicted_decrement(du: &[f64], dv: &[f64], theta: f64, phi: f64) -> f64 {
    let bracket = norm(du) * norm(dv) - dot(du, dv);
    -(theta.sin() * phi.sin()).powi(2) * bracket
}

/// One collision event of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionEvent {
    pub time: f64,
    pub pair: (usize, usize),
    pub theta: f64,
    pub phi: Option<f64>,
}

/// A state that the Nanbu dynamics can act on.
pub trait NanbuSystem: Clone {
    fn particle_count(&self) -> usize;
    fn time(&self) -> f64;
    fn set_time(&mut self, t: f64);
    /// Applies a collision of `(i, j)`; returns the azimuthal angle for
    /// coupled steps.
    fn apply<R: Rng + ?Sized>(&mut self, i: usize, j: usize, theta: f64, rng: &mut R) -> Option<f64>;
    /// Worst `(momentum, energy)` residual over all copies.
    fn residuals(&self) -> (f64, f64);
    fn renormalize(&mut self);
    /// Contribution of particles `i`, `j` to the coupling distance, if coupled.
    fn local_distance(&self, _i: usize, _j: usize) -> Option<f64> {
        None
    }
}

impl NanbuSystem for ParticleState {
    fn particle_count(&self) -> usize {
        self.len()
    }
    fn time(&self) -> f64 {
        self.time
    }
    fn set_time(&mut self, t: f64) {
        self.time = t;
    }
    fn apply<R: Rng + ?Sized>(&mut self, i: usize, j: usize, theta: f64, rng: &mut R) -> Option<f64> {
        self.collide(i, j, theta, rng);
        None
    }
    fn residuals(&self) -> (f64, f64) {
        ParticleState::residuals(self)
    }
    fn renormalize(&mut self) {
        self.project();
    }
}

impl NanbuSystem for CoupledState {
    fn particle_count(&self) -> usize {
        self.len()
    }
    fn time(&self) -> f64 {
        self.u.time
    }
    fn set_time(&mut self, t: f64) {
        self.u.time = t;
        self.v.time = t;
    }
    fn apply<R: Rng + ?Sized>(&mut self, i: usize, j: usize, theta: f64, rng: &mut R) -> Option<f64> {
        self.collide(i, j, theta, rng)
    }
    fn residuals(&self) -> (f64, f64) {
        let (mu, eu) = self.u.residuals();
        let (mv, ev) = self.v.residuals();
        (mu.max(mv), eu.max(ev))
    }
    fn renormalize(&mut self) {
        self.u.project();
        self.v.project();
    }
    fn local_distance(&self, i: usize, j: usize) -> Option<f64> {
        Some(self.pair_distance(i, j))
    }
}

/// Draws the waiting time, the ordered pair and the scattering angle of the
/// next event. The pair is uniform on `[0, N)^2`; diagonal draws are kept.
pub fn draw_event<R: Rng + ?Sized>(
    n: usize,
    kernel: &AngularKernel,
    rng: &mut R,
) -> Result<(f64, (usize, usize), f64)> {
    let rate = n as f64 * kernel.total_mass();
    if !rate.is_finite() {
        return Err(Error::InfiniteMass);
    }
    if !(rate > 0.0) {
        return Err(Error::ZeroMassKernel);
    }
    let dt = Exp::new(rate).expect("positive rate").sample(rng);
    let i = rng.random_range(0..n);
    let j = rng.random_range(0..n);
    let theta = kernel.sample_theta(rng)?;
    Ok((dt, (i, j), theta))
}

/// Configuration of [`run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub t_end: f64,
    /// Record times in `[0, t_end]`, sorted.
    pub record_times: Vec<f64>,
    /// Also record after every k-th event.
    pub record_every: Option<u64>,
    /// Check the coupling distance event by event (coupled states only).
    pub check_monotone: bool,
    /// Re-project onto the conservation sphere at record times.
    pub renormalize: bool,
}

impl RunOptions {
    /// Records at `0, t_end/k, ..., t_end`.
    pub fn uniform_grid(t_end: f64, intervals: usize) -> Self {
        let k = intervals.max(1);
        let record_times = if t_end > 0.0 {
            (0..=k).map(|i| t_end * i as f64 / k as f64).collect()
        } else {
            vec![0.0]
        };
        Self { t_end, record_times, record_every: None, check_monotone: true, renormalize: false }
    }

    pub fn at_times(t_end: f64, record_times: Vec<f64>) -> Self {
        Self { t_end, record_times, record_every: None, check_monotone: true, renormalize: false }
    }
}

/// What the recorder sees at each record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordPoint {
    pub time: f64,
    pub events: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RunSummary {
    pub events: u64,
    /// Events drawn on the diagonal `i == j`.
    pub diagonal_events: u64,
    pub records: u64,
    /// Largest conservation residual seen at record times.
    pub max_drift: f64,
}

/// Event-driven evolution up to `t_end`; see [`run_logged`].
pub fn run<S, R, F>(
    state: &mut S,
    kernel: &AngularKernel,
    options: &RunOptions,
    rng: &mut R,
    recorder: F,
) -> Result<RunSummary>
where
    S: NanbuSystem,
    R: Rng + ?Sized,
    F: FnMut(RecordPoint, &S) -> Result<()>,
{
    run_logged(state, kernel, options, rng, recorder, |_| {})
}

/// Gillespie simulation with total rate `N b_eps`. The recorder is called at
/// every record time (the state is piecewise constant, so this is exact) and
/// optionally every k-th event; `on_event` sees every collision.
///
/// Fails with [`Error::InvariantDrift`] when a conservation residual exceeds
/// [`DRIFT_TOLERANCE`] at a record, and with
/// [`Error::MonotonicityViolation`] if a coupled collision increases the
/// coupling distance.
pub fn run_logged<S, R, F, G>(
    state: &mut S,
    kernel: &AngularKernel,
    options: &RunOptions,
    rng: &mut R,
    mut recorder: F,
    mut on_event: G,
) -> Result<RunSummary>
where
    S: NanbuSystem,
    R: Rng + ?Sized,
    F: FnMut(RecordPoint, &S) -> Result<()>,
    G: FnMut(&CollisionEvent),
{
    let n = state.particle_count();
    let t0 = state.time();
    let t_end = options.t_end;
    let mut grid = options.record_times.iter().copied().filter(|&t| t <= t_end).peekable();
    let mut summary = RunSummary::default();

    let mut record = |state: &mut S, time: f64, summary: &mut RunSummary| -> Result<()> {
        let (momentum, energy) = state.residuals();
        summary.max_drift = summary.max_drift.max(momentum).max(energy);
        if momentum > DRIFT_TOLERANCE || energy > DRIFT_TOLERANCE {
            return Err(Error::InvariantDrift { time, momentum, energy });
        }
        if options.renormalize {
            state.renormalize();
        }
        summary.records += 1;
        recorder(RecordPoint { time, events: summary.events }, state)
    };

    if t_end <= t0 {
        while grid.next_if(|&t| t <= t0).is_some() {
            record(state, t0, &mut summary)?;
        }
        return Ok(summary);
    }

    let mut t = t0;
    loop {
        let (dt, (i, j), theta) = draw_event(n, kernel, rng)?;
        let t_next = t + dt;
        while let Some(tr) = grid.next_if(|&tr| tr < t_next) {
            state.set_time(tr.max(t0));
            record(state, tr, &mut summary)?;
        }
        if t_next > t_end {
            state.set_time(t_end);
            break;
        }
        t = t_next;
        state.set_time(t);
        let before = if options.check_monotone && i != j { state.local_distance(i, j) } else { None };
        let phi = state.apply(i, j, theta, rng);
        summary.events += 1;
        if i == j {
            summary.diagonal_events += 1;
        }
        if let Some(before) = before {
            let after = state.local_distance(i, j).expect("coupled state");
            if after > before + MONOTONICITY_SLACK * (1.0 + before) {
                return Err(Error::MonotonicityViolation {
                    event: summary.events,
                    time: t,
                    increase: after - before,
                });
            }
        }
        on_event(&CollisionEvent { time: t, pair: (i, j), theta, phi });
        if let Some(k) = options.record_every {
            if k > 0 && summary.events % k == 0 {
                record(state, t, &mut summary)?;
            }
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn init_uniform_two_particles() {
        let s = ParticleState::init_uniform(2, 3, &mut rng(1)).unwrap();
        let (a, b) = (s.velocity(0), s.velocity(1));
        for k in 0..3 {
            assert!((a[k] + b[k]).abs() < 1e-15);
        }
        assert!((norm(a) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn init_uniform_conserves() {
        let mut r = rng(2);
        for n in [2, 3, 10, 500] {
            for d in [3, 4, 7] {
                let s = ParticleState::init_uniform(n, d, &mut r).unwrap();
                let (m, e) = s.residuals();
                assert!(m < 1e-12 && e < 1e-12);
            }
        }
        assert_eq!(ParticleState::init_uniform(1, 3, &mut r), Err(Error::TooFewParticles { min: 2, got: 1 }));
        assert_eq!(ParticleState::init_uniform(4, 2, &mut r), Err(Error::Dimension(2)));
    }

    #[test]
    fn new_rejects_unnormalized() {
        assert!(matches!(
            ParticleState::new(3, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
            Err(Error::Conservation { .. })
        ));
        assert!(ParticleState::new(3, vec![1.0, 0.0, 0.0, -1.0, 0.0, 0.0]).is_ok());
        assert!(ParticleState::projected(3, vec![2.0, 1.0, 1.0, 2.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn collide_pair_examples() {
        let (a, b) = collide_pair(&[1.0, 0.0, 0.0], &[-1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]);
        assert_eq!(a, vec![0.0, 1.0, 0.0]);
        assert_eq!(b, vec![0.0, -1.0, 0.0]);

        let v = [0.3, -1.2, 0.7];
        let w = [1.1, 0.4, -0.2];
        let n = UnitVector::normalize(sub(&v, &w)).unwrap();
        let (a, b) = collide_pair(&v, &w, &n);
        for k in 0..3 {
            assert!((a[k] - v[k]).abs() < 1e-15 && (b[k] - w[k]).abs() < 1e-15);
        }
        assert_eq!(collide_pair(&v, &v, &n), (v.to_vec(), v.to_vec()));
    }

    #[test]
    fn collide_pair_conserves() {
        let mut r = rng(3);
        for _ in 0..1000 {
            let v = gaussian(5, &mut r);
            let w = gaussian(5, &mut r);
            let n = UnitVector::uniform(5, &mut r).unwrap();
            let (a, b) = collide_pair(&v, &w, &n);
            for k in 0..5 {
                assert!((a[k] + b[k] - v[k] - w[k]).abs() < 1e-12);
            }
            assert!((norm_sq(&a) + norm_sq(&b) - norm_sq(&v) - norm_sq(&w)).abs() < 1e-12);
            assert!((dist_sq(&a, &b) - dist_sq(&v, &w)).abs() < 1e-12);
        }
    }

    #[test]
    fn coupled_collide_pathwise_identity() {
        let mut r = rng(4);
        for d in 3..=6 {
            for _ in 0..2000 {
                let (u, us, v, vs) = (gaussian(d, &mut r), gaussian(d, &mut r), gaussian(d, &mut r), gaussian(d, &mut r));
                let theta = r.random::<f64>() * PI;
                let out = coupled_collide(&u, &us, &v, &vs, theta, &mut r);
                let lhs = dist_sq(&out.u, &out.v) + dist_sq(&out.u_star, &out.v_star)
                    - dist_sq(&u, &v)
                    - dist_sq(&us, &vs);
                let rhs = predicted_decrement(&sub(&u, &us), &sub(&v, &vs), theta, out.phi.unwrap());
                assert!((lhs - rhs).abs() < 1e-9, "d={d}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn coupled_collide_identity_and_aligned() {
        let mut r = rng(5);
        let u = gaussian(3, &mut r);
        let us = gaussian(3, &mut r);
        let out = coupled_collide(&u, &us, &u, &us, 1.0, &mut r);
        assert_eq!(out.u, out.v);
        assert_eq!(out.u_star, out.v_star);

        // v - v* = 2 (u - u*): aligned directions, zero decrement
        let v: Vec<f64> = u.iter().map(|x| 2.0 * x).collect();
        let vs: Vec<f64> = us.iter().map(|x| 2.0 * x).collect();
        let out = coupled_collide(&u, &us, &v, &vs, 2.0, &mut r);
        let change = dist_sq(&out.u, &out.v) + dist_sq(&out.u_star, &out.v_star) - dist_sq(&u, &v) - dist_sq(&us, &vs);
        assert!(change.abs() < 1e-12);
    }

    #[test]
    fn coupled_collide_equal_pair_invariants() {
        // same momentum and energy per pair: the bracket equals |u-v|^2 + |u*-v*|^2
        let mut r = rng(6);
        for _ in 0..500 {
            let u = gaussian(3, &mut r);
            let us: Vec<f64> = u.iter().map(|x| -x).collect();
            let n = UnitVector::uniform(3, &mut r).unwrap();
            let v: Vec<f64> = n.iter().map(|x| x * norm(&u)).collect();
            let vs: Vec<f64> = v.iter().map(|x| -x).collect();
            let theta = r.random::<f64>() * PI;
            let out = coupled_collide(&u, &us, &v, &vs, theta, &mut r);
            let before = dist_sq(&u, &v) + dist_sq(&us, &vs);
            let change = dist_sq(&out.u, &out.v) + dist_sq(&out.u_star, &out.v_star) - before;
            let phi = out.phi.unwrap();
            let expected = -(theta.sin() * phi.sin()).powi(2) * before;
            assert!((change - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn coupled_collide_one_degenerate_marginal() {
        let mut r = rng(7);
        let u = vec![1.0, 0.0, 0.0];
        let us = vec![-1.0, 0.0, 0.0];
        let v = vec![0.5, 0.5, 0.0];
        let out = coupled_collide(&u, &us, &v, &v, FRAC_PI_2, &mut r);
        assert_eq!(out.phi, None);
        assert_eq!((out.v.clone(), out.v_star.clone()), (v.clone(), v.clone()));
        assert!((dot(&out.u, &u)).abs() < 1e-12);
    }

    #[test]
    fn zero_time_run_records_once() {
        let mut s = ParticleState::init_uniform(16, 3, &mut rng(8)).unwrap();
        let start = s.clone();
        let k = AngularKernel::uniform(1.0).unwrap();
        let mut records = 0;
        let summary = run(&mut s, &k, &RunOptions::uniform_grid(0.0, 10), &mut rng(9), |p, _| {
            records += 1;
            assert_eq!(p.time, 0.0);
            Ok(())
        })
        .unwrap();
        assert_eq!(records, 1);
        assert_eq!(summary.events, 0);
        assert_eq!(s, start);
    }

    #[test]
    fn event_count_is_poisson() {
        let n = 8;
        let mu = 2.0;
        let t_end = 3.0;
        let k = AngularKernel::atom(FRAC_PI_2, mu).unwrap();
        let mut r = rng(10);
        let reps = 2000;
        let mut total = 0.0;
        for _ in 0..reps {
            let mut s = ParticleState::init_uniform(n, 3, &mut r).unwrap();
            total += run(&mut s, &k, &RunOptions::at_times(t_end, vec![]), &mut r, |_, _| Ok(())).unwrap().events as f64;
        }
        let mean = n as f64 * mu * t_end;
        let se = (mean / reps as f64).sqrt();
        assert!((total / reps as f64 - mean).abs() < 3.0 * se, "{} vs {mean}", total / reps as f64);
    }

    #[test]
    fn identical_start_stays_coupled() {
        let u = ParticleState::init_uniform(32, 4, &mut rng(11)).unwrap();
        let mut cs = CoupledState::identical(u);
        let k = AngularKernel::uniform(2.0).unwrap();
        run(&mut cs, &k, &RunOptions::uniform_grid(2.0, 20), &mut rng(12), |_, s| {
            assert_eq!(s.u, s.v);
            Ok(())
        })
        .unwrap();
    }

    #[test]
    fn coupled_run_is_monotone_and_conservative() {
        let mut r = rng(13);
        let u = ParticleState::init_uniform(64, 3, &mut r).unwrap();
        let v = ParticleState::init_uniform(64, 3, &mut r).unwrap();
        let mut cs = CoupledState::new(u, v).unwrap();
        let k = AngularKernel::uniform(1.0).unwrap();
        let mut prev = f64::INFINITY;
        let summary = run(&mut cs, &k, &RunOptions::uniform_grid(5.0, 50), &mut r, |_, s| {
            let dist: f64 = (0..s.len()).map(|i| dist_sq(s.u.velocity(i), s.v.velocity(i))).sum();
            assert!(dist <= prev * (1.0 + 1e-12));
            prev = dist;
            Ok(())
        })
        .unwrap();
        assert!(summary.events > 0);
        assert!(summary.max_drift < 1e-12);
    }

    #[test]
    fn record_every_and_grid() {
        let mut s = ParticleState::init_uniform(10, 3, &mut rng(14)).unwrap();
        let k = AngularKernel::uniform(1.0).unwrap();
        let mut opts = RunOptions::uniform_grid(1.0, 4);
        opts.record_every = Some(3);
        let mut times = Vec::new();
        let summary = run(&mut s, &k, &opts, &mut rng(15), |p, st| {
            assert_eq!(st.time(), p.time);
            times.push(p.time);
            Ok(())
        })
        .unwrap();
        assert_eq!(times.len() as u64, 5 + summary.events / 3);
        assert!(times.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*times.last().unwrap(), 1.0);
    }

    #[test]
    fn diagonal_draws_are_no_ops() {
        let n = 4;
        let k = AngularKernel::uniform(1.0).unwrap();
        let mut s = ParticleState::init_uniform(n, 3, &mut rng(16)).unwrap();
        let before = s.clone();
        s.collide(2, 2, 1.0, &mut rng(17));
        assert_eq!(s, before);
        let summary = run(&mut s, &k, &RunOptions::at_times(200.0, vec![]), &mut rng(18), |_, _| Ok(())).unwrap();
        let frac = summary.diagonal_events as f64 / summary.events as f64;
        let se = (0.25 * 0.75 / summary.events as f64).sqrt();
        assert!((frac - 1.0 / n as f64).abs() < 4.0 * se);
    }

    #[test]
    fn permutation_replay() {
        let n = 12;
        let k = AngularKernel::uniform(1.0).unwrap();
        let s = ParticleState::init_uniform(n, 3, &mut rng(19)).unwrap();
        let perm: Vec<usize> = (0..n).map(|i| (5 * i + 3) % n).collect();
        let mut a = s.clone();
        let mut b = s.permuted(&perm);
        let (mut ra, mut rb) = (rng(20), rng(20));
        for _ in 0..500 {
            let (_, (i, j), theta) = draw_event(n, &k, &mut ra).unwrap();
            a.collide(i, j, theta, &mut ra);
            let (_, (i2, j2), theta2) = draw_event(n, &k, &mut rb).unwrap();
            b.collide(perm[i2], perm[j2], theta2, &mut rb);
        }
        let pa = a.permuted(&perm);
        for i in 0..n {
            for (x, y) in pa.velocity(i).iter().zip(b.velocity(i)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
