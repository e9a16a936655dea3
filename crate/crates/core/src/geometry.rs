//! Geometry on the sphere `S^{d-1}` of collisional directions.
//!
//! The central object is the spherical coupling of two isotropic steps with
//! the same scattering angle: both post-collisional directions are built from
//! one shared azimuthal sample `(phi, l)` in frames `(n_u, m_u)` and
//! `(n_v, m_v)` related by the elementary rotation carrying `n_u` to `n_v`.

use std::f64::consts::FRAC_PI_2;
use std::ops::Deref;

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::vecops::{axpy, dot, gaussian, norm, scale};

/// Tolerance on `|n| = 1` accepted by [`UnitVector::new`].
pub const UNIT_TOLERANCE: f64 = 1e-12;

/// `1 + n_u . n_v` at or below this value selects the antipodal branch.
pub const ANTIPODAL_TOLERANCE: f64 = 1e-12;

const ORTHONORMAL_TOLERANCE: f64 = 1e-10;
const REDRAW_THRESHOLD: f64 = 1e-8;

/// A point on the unit sphere `S^{d-1}`, `d >= 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Wraps a vector that is already unit length within [`UNIT_TOLERANCE`].
    /// The stored components are renormalized.
    pub fn new(components: Vec<f64>) -> Result<Self> {
        check_dim(components.len())?;
        let n = norm(&components);
        if (n - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::NotUnit(n));
        }
        Ok(Self::renormalized(components))
    }

    /// Normalizes an arbitrary nonzero vector.
    pub fn normalize(components: Vec<f64>) -> Result<Self> {
        check_dim(components.len())?;
        let n = norm(&components);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::NotUnit(n));
        }
        Ok(Self::renormalized(components))
    }

    /// The `i`-th canonical basis vector of `R^d`.
    pub fn basis(d: usize, i: usize) -> Result<Self> {
        check_dim(d)?;
        assert!(i < d, "basis index {i} out of range for d = {d}");
        let mut e = vec![0.0; d];
        e[i] = 1.0;
        Ok(Self(e))
    }

    /// A uniformly distributed point on `S^{d-1}`.
    pub fn uniform<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<Self> {
        check_dim(d)?;
        loop {
            let g = gaussian(d, rng);
            if norm(&g) >= REDRAW_THRESHOLD {
                return Ok(Self::renormalized(g));
            }
        }
    }

    pub(crate) fn renormalized(mut components: Vec<f64>) -> Self {
        let n = norm(&components);
        scale(1.0 / n, &mut components);
        Self(components)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &UnitVector) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn neg(&self) -> UnitVector {
        Self(self.0.iter().map(|x| -x).collect())
    }
}

impl Deref for UnitVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn check_dim(d: usize) -> Result<()> {
    if d < 3 {
        Err(Error::Dimension(d))
    } else {
        Ok(())
    }
}

/// The Wallis integral `c_d = int_0^{pi/2} sin^d(phi) dphi`.
pub fn wallis(d: u32) -> f64 {
    let (mut c, start) = if d % 2 == 0 { (FRAC_PI_2, 2) } else { (1.0, 3) };
    let mut k = start;
    while k <= d {
        c *= (k - 1) as f64 / k as f64;
        k += 2;
    }
    c
}

/// `c_{d-1} / c_{d-3}`, the mean of `sin^2(phi)` under the azimuthal law in
/// dimension `d`. Equals `(d - 2) / (d - 1)`.
pub fn wallis_ratio(d: usize) -> Result<f64> {
    check_dim(d)?;
    Ok((d as f64 - 2.0) / (d as f64 - 1.0))
}

/// Azimuthal coordinates of a post-collisional direction relative to a frame
/// `(n, m)`: `n' = cos(theta) n + sin(theta) (cos(phi) m + sin(phi) l)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AzimuthalSample {
    pub phi: f64,
    pub l: UnitVector,
}

/// Draws `(phi, l)` with `phi` of density `sin^{d-3}(phi) / (2 c_{d-3})` on
/// `[0, pi]` and `l` uniform on the unit sphere of `Span(n, m)^perp`.
pub fn sample_azimuthal<R: Rng + ?Sized>(
    d: usize,
    frame: (&UnitVector, &UnitVector),
    rng: &mut R,
) -> Result<AzimuthalSample> {
    check_dim(d)?;
    let (n, m) = frame;
    if n.dim() != d || m.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: if n.dim() != d { n.dim() } else { m.dim() },
        });
    }
    if n.dot(m).abs() > ORTHONORMAL_TOLERANCE {
        return Err(Error::FrameNotOrthonormal);
    }
    let phi = sample_phi(d, rng);
    let l = orthogonal_direction(&[n.as_slice(), m.as_slice()], rng);
    Ok(AzimuthalSample { phi, l })
}

/// `phi = 2 asin(sqrt(X))`, i.e. `cos(phi) = 1 - 2X`, with
/// `X ~ Beta((d-2)/2, (d-2)/2)` drawn as a ratio of Gammas.
fn sample_phi<R: Rng + ?Sized>(d: usize, rng: &mut R) -> f64 {
    let shape = (d as f64 - 2.0) / 2.0;
    let gamma = Gamma::new(shape, 1.0).expect("shape > 0 for d >= 3");
    loop {
        let a: f64 = gamma.sample(rng);
        let b: f64 = gamma.sample(rng);
        let s = a + b;
        if s > 0.0 {
            let x = (a / s).clamp(0.0, 1.0);
            return 2.0 * x.sqrt().asin();
        }
    }
}

/// A uniform unit vector orthogonal to the given orthonormal vectors.
fn orthogonal_direction<R: Rng + ?Sized>(basis: &[&[f64]], rng: &mut R) -> UnitVector {
    let d = basis[0].len();
    loop {
        let mut g = gaussian(d, rng);
        // two passes of Gram-Schmidt
        for _ in 0..2 {
            for b in basis {
                let c = dot(&g, b);
                axpy(-c, b, &mut g);
            }
        }
        if norm(&g) >= REDRAW_THRESHOLD {
            return UnitVector::renormalized(g);
        }
    }
}

fn direction_from_frame(
    theta: f64,
    n: &[f64],
    m: &[f64],
    sample: &AzimuthalSample,
) -> UnitVector {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = sample.phi.sin_cos();
    let mut out = n.iter().map(|x| ct * x).collect::<Vec<_>>();
    axpy(st * cp, m, &mut out);
    axpy(st * sp, &sample.l, &mut out);
    UnitVector::renormalized(out)
}

/// Isotropic step with scattering angle `theta`:
/// `n' = cos(theta) n + sin(theta) w`, `w` uniform on the unit sphere of `n^perp`.
pub fn isotropic_step<R: Rng + ?Sized>(n: &UnitVector, theta: f64, rng: &mut R) -> UnitVector {
    let w = orthogonal_direction(&[n.as_slice()], rng);
    let (st, ct) = theta.sin_cos();
    let mut out = n.iter().map(|x| ct * x).collect::<Vec<_>>();
    axpy(st, &w, &mut out);
    UnitVector::renormalized(out)
}

/// Applies the rotation of `R^d` that fixes `Span(a, b)^perp` pointwise and
/// maps `a` to `b`.
pub fn elementary_rotation_apply(a: &UnitVector, b: &UnitVector, x: &[f64]) -> Result<Vec<f64>> {
    let c = a.dot(b);
    if 1.0 + c <= ANTIPODAL_TOLERANCE {
        return Err(Error::Antipodal);
    }
    Ok(rotate_towards(a, b, c, x))
}

fn rotate_towards(a: &[f64], b: &[f64], c: f64, x: &[f64]) -> Vec<f64> {
    let mut w = b.to_vec();
    axpy(-c, a, &mut w);
    let s = norm(&w);
    let mut out = x.to_vec();
    if s <= f64::EPSILON * 0.5 {
        return out;
    }
    scale(1.0 / s, &mut w);
    let xa = dot(x, a);
    let xm = dot(x, &w);
    let ya = c * xa - s * xm;
    let ym = s * xa + c * xm;
    axpy(ya - xa, a, &mut out);
    axpy(ym - xm, &w, &mut out);
    out
}

/// The reflection-free image of `x` through the half-turn in the plane
/// `Span(n, m)` (`n`, `m` orthonormal): negates both in-plane components.
fn half_turn(n: &[f64], m: &[f64], x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    axpy(-2.0 * dot(x, n), n, &mut out);
    axpy(-2.0 * dot(x, m), m, &mut out);
    out
}

/// A unit vector orthogonal to `n`, taken from a uniform draw `sigma`.
fn random_normal_to<R: Rng + ?Sized>(n: &UnitVector, rng: &mut R) -> UnitVector {
    orthogonal_direction(&[n.as_slice()], rng)
}

/// Rotation carrying `n_u` to `n_v` when the two are antipodal within
/// tolerance: a half-turn in `Span(n_u, m)` followed by the (tiny) elementary
/// rotation from `-n_u` to `n_v`.
fn antipodal_transport(n_u: &UnitVector, n_v: &UnitVector, m: &UnitVector, x: &[f64]) -> Vec<f64> {
    let flipped = half_turn(n_u, m, x);
    let minus_u = n_u.neg();
    let c = minus_u.dot(n_v);
    rotate_towards(&minus_u, n_v, c, &flipped)
}

/// The spherical coupling `Coupl_{n_u,n_v}(n'_u)`.
///
/// When `n_u` and `n_v` are antipodal the rotation plane is undefined; it is
/// then drawn as `Span(n_u, sigma)` with `sigma` uniform on the sphere.
pub fn couple_directions<R: Rng + ?Sized>(
    n_u: &UnitVector,
    n_v: &UnitVector,
    n_u_prime: &UnitVector,
    rng: &mut R,
) -> UnitVector {
    let c = n_u.dot(n_v);
    let out = if 1.0 + c <= ANTIPODAL_TOLERANCE {
        let m = random_normal_to(n_u, rng);
        antipodal_transport(n_u, n_v, &m, n_u_prime)
    } else {
        rotate_towards(n_u, n_v, c, n_u_prime)
    };
    UnitVector::renormalized(out)
}

/// Output of [`coupled_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledStep {
    pub n_u: UnitVector,
    pub n_v: UnitVector,
    pub phi: f64,
}

/// One spherically coupled isotropic step with scattering angle `theta`.
///
/// Both outputs satisfy `n' . n = cos(theta)` and, pathwise,
/// `|n'_u - n'_v|^2 = (1 - sin^2(theta) sin^2(phi)) |n_u - n_v|^2`.
pub fn coupled_step<R: Rng + ?Sized>(
    n_u: &UnitVector,
    n_v: &UnitVector,
    theta: f64,
    rng: &mut R,
) -> CoupledStep {
    let d = n_u.dim();
    let c = n_u.dot(n_v);

    if 1.0 + c <= ANTIPODAL_TOLERANCE {
        let m_u = random_normal_to(n_u, rng);
        let sample = sample_azimuthal(d, (n_u, &m_u), rng).expect("valid frame");
        let new_u = direction_from_frame(theta, n_u, &m_u, &sample);
        let new_v = UnitVector::renormalized(antipodal_transport(n_u, n_v, &m_u, &new_u));
        return CoupledStep { n_u: new_u, n_v: new_v, phi: sample.phi };
    }

    let mut w = n_v.to_vec();
    axpy(-c, n_u, &mut w);
    // second pass: near alignment the first one leaves an O(eps/s) component along n_u
    let r = dot(&w, n_u);
    axpy(-r, n_u, &mut w);
    let s = norm(&w);
    if s <= UNIT_TOLERANCE {
        // aligned directions: one shared frame, arbitrary m
        let m = random_normal_to(n_u, rng);
        let sample = sample_azimuthal(d, (n_u, &m), rng).expect("valid frame");
        let new_u = direction_from_frame(theta, n_u, &m, &sample);
        let new_v = if n_u == n_v {
            new_u.clone()
        } else {
            UnitVector::renormalized(rotate_towards(n_u, n_v, c, &new_u))
        };
        return CoupledStep { n_u: new_u, n_v: new_v, phi: sample.phi };
    }

    scale(1.0 / s, &mut w);
    let m_u = UnitVector(w);
    // image of m_u under the rotation taking n_u to n_v
    let mut m_v = m_u.iter().map(|x| c * x).collect::<Vec<_>>();
    axpy(-s, n_u, &mut m_v);

    let sample = sample_azimuthal(d, (n_u, &m_u), rng).expect("valid frame");
    CoupledStep {
        n_u: direction_from_frame(theta, n_u, &m_u, &sample),
        n_v: direction_from_frame(theta, n_v, &m_v, &sample),
        phi: sample.phi,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vecops::dist_sq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Composite Simpson rule, independent of the Wallis recurrence.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        s * h / 3.0
    }

    fn wallis_quad(d: i32) -> f64 {
        simpson(|x| x.sin().powi(d), 0.0, FRAC_PI_2, 20_000)
    }

    #[test]
    fn wallis_base_cases() {
        assert_eq!(wallis(0), FRAC_PI_2);
        assert_eq!(wallis(1), 1.0);
    }

    #[test]
    fn wallis_matches_quadrature() {
        assert!((wallis(4) - 3.0 * PI / 16.0).abs() < 1e-15);
        for d in 0..12 {
            assert!((wallis(d) - wallis_quad(d as i32)).abs() < 1e-12, "d = {d}");
        }
    }

    #[test]
    fn wallis_ratio_values() {
        // c_2 / c_0 and c_3 / c_1 by quadrature
        let r3 = wallis_quad(2) / wallis_quad(0);
        let r4 = wallis_quad(3) / wallis_quad(1);
        assert!((r3 - 0.5).abs() < 1e-12);
        assert!((r4 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(wallis_ratio(3).unwrap(), 0.5);
        assert!((wallis_ratio(4).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let mut prev = 0.0;
        for d in 3..200 {
            let r = wallis_ratio(d).unwrap();
            assert!((r - wallis(d as u32 - 1) / wallis(d as u32 - 3)).abs() < 1e-14);
            assert!(r > prev && r < 1.0);
            prev = r;
        }
        assert!(1.0 - wallis_ratio(100_000).unwrap() < 1e-4);
        assert_eq!(wallis_ratio(2), Err(Error::Dimension(2)));
    }

    #[test]
    fn unit_vector_rejects_bad_input() {
        assert!(matches!(UnitVector::new(vec![1.0, 1.0, 0.0]), Err(Error::NotUnit(_))));
        assert_eq!(UnitVector::new(vec![1.0, 0.0]), Err(Error::Dimension(2)));
        assert!(UnitVector::normalize(vec![0.0; 3]).is_err());
    }

    #[test]
    fn azimuthal_rejects_non_orthonormal_frame() {
        let n = UnitVector::basis(3, 0).unwrap();
        let m = UnitVector::normalize(vec![1.0, 1.0, 0.0]).unwrap();
        assert_eq!(
            sample_azimuthal(3, (&n, &m), &mut rng(0)),
            Err(Error::FrameNotOrthonormal)
        );
    }

    #[test]
    fn azimuthal_d3_is_uniform_with_signed_normal() {
        let n = UnitVector::basis(3, 0).unwrap();
        let m = UnitVector::basis(3, 1).unwrap();
        let mut r = rng(1);
        let k = 100_000;
        let mut bins = [0usize; 4];
        let mut plus = 0;
        for _ in 0..k {
            let s = sample_azimuthal(3, (&n, &m), &mut r).unwrap();
            assert!((0.0..=PI).contains(&s.phi));
            bins[((s.phi / PI * 4.0) as usize).min(3)] += 1;
            assert!((s.l[2].abs() - 1.0).abs() < 1e-12);
            if s.l[2] > 0.0 {
                plus += 1;
            }
        }
        let sigma = (k as f64 * 0.25 * 0.75).sqrt();
        for b in bins {
            assert!((b as f64 - k as f64 / 4.0).abs() < 4.0 * sigma, "{bins:?}");
        }
        assert!((plus as f64 - k as f64 / 2.0).abs() < 4.0 * (k as f64 / 4.0).sqrt());
    }

    #[test]
    fn azimuthal_d5_mean_sin_sq() {
        // E sin^2(phi) = c_4 / c_2 = 3/4 by quadrature
        let expected = wallis_quad(4) / wallis_quad(2);
        assert!((expected - 0.75).abs() < 1e-12);
        let d = 5;
        let n = UnitVector::basis(d, 0).unwrap();
        let m = UnitVector::basis(d, 1).unwrap();
        let mut r = rng(2);
        let k = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut l_mean = vec![0.0; d];
        for _ in 0..k {
            let s = sample_azimuthal(d, (&n, &m), &mut r).unwrap();
            let x = s.phi.sin().powi(2);
            sum += x;
            sum_sq += x * x;
            assert!(s.l[0].abs() < 1e-10 && s.l[1].abs() < 1e-10);
            axpy(1.0, &s.l, &mut l_mean);
        }
        let mean = sum / k as f64;
        let se = ((sum_sq / k as f64 - mean * mean) / k as f64).sqrt();
        assert!((mean - expected).abs() < 3.0 * se, "mean {mean}, se {se}");
        // each component of l has variance 1/(d-2)
        let se_l = (1.0 / ((d - 2) as f64 * k as f64)).sqrt();
        for c in &l_mean[2..] {
            assert!((c / k as f64).abs() < 3.0 * se_l);
        }
    }

    #[test]
    fn isotropic_step_edge_angles() {
        let mut r = rng(3);
        let n = UnitVector::uniform(4, &mut r).unwrap();
        let same = isotropic_step(&n, 0.0, &mut r);
        assert!(dist_sq(&same, &n) < 1e-24);
        let opposite = isotropic_step(&n, PI, &mut r);
        assert!(dist_sq(&opposite, &n.neg()) < 1e-24);
    }

    #[test]
    fn isotropic_step_preserves_angle_and_has_mean_cos_theta_n() {
        let mut r = rng(4);
        let n = UnitVector::basis(3, 2).unwrap();
        let theta = FRAC_PI_2;
        let k = 100_000;
        let mut mean = [0.0; 3];
        for _ in 0..k {
            let x = isotropic_step(&n, theta, &mut r);
            assert!((x.dot(&n) - theta.cos()).abs() < 1e-12);
            for i in 0..3 {
                mean[i] += x[i] / k as f64;
            }
        }
        // components orthogonal to n have variance 1/2 for theta = pi/2 in d = 3
        let se = (0.5 / k as f64).sqrt();
        assert!(mean[0].abs() < 3.0 * se && mean[1].abs() < 3.0 * se);
        assert!(mean[2].abs() < 1e-12);
    }

    #[test]
    fn elementary_rotation_examples() {
        let e1 = UnitVector::basis(3, 0).unwrap();
        let e2 = UnitVector::basis(3, 1).unwrap();
        let e3 = UnitVector::basis(3, 2).unwrap();
        let y = elementary_rotation_apply(&e1, &e2, &e2).unwrap();
        assert!(dist_sq(&y, &[-1.0, 0.0, 0.0]) < 1e-30);
        let y = elementary_rotation_apply(&e1, &e1, &[0.3, -2.0, 5.0]).unwrap();
        assert_eq!(y, vec![0.3, -2.0, 5.0]);
        let y = elementary_rotation_apply(&e1, &e2, &e3).unwrap();
        assert!(dist_sq(&y, &e3) < 1e-30);
        assert_eq!(elementary_rotation_apply(&e1, &e1.neg(), &e3), Err(Error::Antipodal));
    }

    #[test]
    fn elementary_rotation_fixes_orthogonal_complement() {
        let mut r = rng(5);
        for d in 3..8 {
            let a = UnitVector::uniform(d, &mut r).unwrap();
            let b = UnitVector::uniform(d, &mut r).unwrap();
            let mut w = b.to_vec();
            axpy(-a.dot(&b), &a, &mut w);
            let m = UnitVector::renormalized(w);
            let x = orthogonal_direction(&[&a, &m], &mut r);
            let y = elementary_rotation_apply(&a, &b, &x).unwrap();
            assert!(dist_sq(&x, &y) < 1e-24);
            let ab = elementary_rotation_apply(&a, &b, &a).unwrap();
            assert!(dist_sq(&ab, &b) < 1e-24);
        }
    }

    #[test]
    fn couple_directions_examples() {
        let mut r = rng(6);
        let e1 = UnitVector::basis(3, 0).unwrap();
        let e2 = UnitVector::basis(3, 1).unwrap();
        let y = couple_directions(&e1, &e2, &e2, &mut r);
        assert!(dist_sq(&y, &e1.neg()) < 1e-24);
        for d in 3..7 {
            let n = UnitVector::uniform(d, &mut r).unwrap();
            let x = UnitVector::uniform(d, &mut r).unwrap();
            assert!(dist_sq(&couple_directions(&n, &n, &x, &mut r), &x) < 1e-24);
            let n_v = UnitVector::uniform(d, &mut r).unwrap();
            let there = couple_directions(&n, &n_v, &x, &mut r);
            let back = couple_directions(&n_v, &n, &there, &mut r);
            assert!(dist_sq(&back, &x) < 1e-24);
        }
    }

    #[test]
    fn couple_directions_antipodal_is_a_rotation() {
        let mut r = rng(7);
        let n = UnitVector::uniform(4, &mut r).unwrap();
        let m = n.neg();
        let x = isotropic_step(&n, 0.7, &mut r);
        let y = couple_directions(&n, &m, &x, &mut r);
        assert!((y.dot(&m) - x.dot(&n)).abs() < 1e-12);
    }

    fn check_pathwise(n_u: &UnitVector, n_v: &UnitVector, theta: f64, r: &mut ChaCha8Rng) {
        let out = coupled_step(n_u, n_v, theta, r);
        assert!((out.n_u.dot(n_u) - theta.cos()).abs() < 1e-12);
        assert!((out.n_v.dot(n_v) - theta.cos()).abs() < 1e-12);
        let before = dist_sq(n_u, n_v);
        let after = dist_sq(&out.n_u, &out.n_v);
        let factor = 1.0 - (theta.sin() * out.phi.sin()).powi(2);
        assert!((after - factor * before).abs() < 1e-10, "{after} vs {}", factor * before);
        assert!(after <= before + 1e-12);
    }

    #[test]
    fn coupled_step_pathwise_identity() {
        let mut r = rng(8);
        for d in 3..7 {
            for _ in 0..2000 {
                let n_u = UnitVector::uniform(d, &mut r).unwrap();
                let n_v = UnitVector::uniform(d, &mut r).unwrap();
                let theta = r.random::<f64>() * PI;
                check_pathwise(&n_u, &n_v, theta, &mut r);
                check_pathwise(&n_u, &n_u, theta, &mut r);
                check_pathwise(&n_u, &n_u.neg(), theta, &mut r);
            }
        }
    }

    #[test]
    fn coupled_step_nearly_aligned() {
        let mut r = rng(13);
        for k in 4..16 {
            let gap = 10f64.powi(-k);
            let n_u = UnitVector::uniform(3, &mut r).unwrap();
            let mut w = UnitVector::uniform(3, &mut r).unwrap().to_vec();
            axpy(gap, &n_u, &mut w);
            let mut near = n_u.to_vec();
            axpy(gap, &w, &mut near);
            let n_v = UnitVector::normalize(near).unwrap();
            for _ in 0..100 {
                check_pathwise(&n_u, &n_v, r.random::<f64>() * PI, &mut r);
            }
        }
    }

    #[test]
    fn coupled_step_zero_angle_is_identity() {
        let mut r = rng(9);
        let n_u = UnitVector::uniform(3, &mut r).unwrap();
        let n_v = UnitVector::uniform(3, &mut r).unwrap();
        let out = coupled_step(&n_u, &n_v, 0.0, &mut r);
        assert!(dist_sq(&out.n_u, &n_u) < 1e-24);
        assert!(dist_sq(&out.n_v, &n_v) < 1e-24);
    }

    #[test]
    fn coupled_step_mean_contraction_d3() {
        // |n_u - n_v|^2 = 1 means n_u . n_v = 1/2
        let mut r = rng(10);
        let n_u = UnitVector::basis(3, 0).unwrap();
        let n_v = UnitVector::new(vec![0.5, 0.75f64.sqrt(), 0.0]).unwrap();
        let theta = PI / 3.0;
        let k = 100_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..k {
            let out = coupled_step(&n_u, &n_v, theta, &mut r);
            let x = dist_sq(&out.n_u, &out.n_v);
            s += x;
            s2 += x * x;
        }
        let mean = s / k as f64;
        let se = ((s2 / k as f64 - mean * mean) / k as f64).sqrt();
        assert!((mean - 5.0 / 8.0).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn coupled_step_marginals_match_isotropic_step() {
        let mut r = rng(11);
        let d = 4;
        let n_u = UnitVector::uniform(d, &mut r).unwrap();
        let n_v = UnitVector::uniform(d, &mut r).unwrap();
        let theta = 1.1;
        let k = 100_000;
        let mut mean_v = vec![0.0; d];
        let mut second_v = vec![0.0; d * d];
        for _ in 0..k {
            let out = coupled_step(&n_u, &n_v, theta, &mut r);
            axpy(1.0 / k as f64, &out.n_v, &mut mean_v);
            for i in 0..d {
                for j in 0..d {
                    second_v[i * d + j] += out.n_v[i] * out.n_v[j] / k as f64;
                }
            }
        }
        // E n' = cos(theta) n ; E n' n'^T = cos^2 n n^T + sin^2 (I - n n^T)/(d-1)
        let (st, ct) = theta.sin_cos();
        for i in 0..d {
            let se = (1.0 / k as f64).sqrt();
            assert!((mean_v[i] - ct * n_v[i]).abs() < 3.0 * se);
            for j in 0..d {
                let nn = n_v[i] * n_v[j];
                let id = if i == j { 1.0 } else { 0.0 };
                let expected = ct * ct * nn + st * st * (id - nn) / (d as f64 - 1.0);
                assert!((second_v[i * d + j] - expected).abs() < 3.0 * se, "({i},{j})");
            }
        }
    }

    #[test]
    fn isotropic_step_is_reversible_under_uniform_start() {
        // (n, n') exchangeable: compare the laws of n.e1 and n'.e1 and the
        // symmetric cross moment
        let mut r = rng(12);
        let d = 3;
        let k = 100_000;
        let mut bins_a = [0usize; 10];
        let mut bins_b = [0usize; 10];
        for _ in 0..k {
            let n = UnitVector::uniform(d, &mut r).unwrap();
            let theta = r.random::<f64>() * PI;
            let np = isotropic_step(&n, theta, &mut r);
            let bin = |x: f64| (((x + 1.0) / 2.0 * 10.0) as usize).min(9);
            bins_a[bin(n[0])] += 1;
            bins_b[bin(np[0])] += 1;
        }
        for i in 0..10 {
            let diff = bins_a[i] as f64 - bins_b[i] as f64;
            let sigma = (2.0 * k as f64 * 0.1).sqrt();
            assert!(diff.abs() < 4.0 * sigma, "bin {i}: {bins_a:?} vs {bins_b:?}");
        }
    }
}
