//! Angular collision kernels `b(dtheta)` on `[0, pi]`.
//!
//! Kernels are Maxwellian by construction: nothing here can depend on the
//! relative speed of a colliding pair. A kernel carries its Grad cut-off
//! `eps`, the total mass `b_eps = int_{theta >= eps} b` (the per-particle
//! collision rate) and the Levy intensity `lambda_eps = int sin^2 b_eps`.

use std::f64::consts::PI;
use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};
use crate::quadrature;

const QUAD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub theta: f64,
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelFamily {
    /// Constant density on `[0, pi]`, parametrized by its uncut total mass.
    Uniform { mass: f64 },
    /// `scale * theta^{-(1 + nu)} dtheta`, `0 < nu < 2`: infinite mass,
    /// finite Levy intensity (grazing collisions).
    TruncatedPower { nu: f64, scale: f64 },
    /// Finite sum of point masses.
    Atoms(Vec<Atom>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AngularKernel {
    family: KernelFamily,
    cutoff: f64,
    total_mass: f64,
    levy_intensity: f64,
}

impl AngularKernel {
    pub fn uniform(mass: f64) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidKernel(format!("uniform mass must be positive, got {mass}")));
        }
        Self::build(KernelFamily::Uniform { mass }, 0.0)
    }

    pub fn power(nu: f64, scale: f64) -> Result<Self> {
        if !(nu > 0.0 && nu < 2.0) {
            return Err(Error::InvalidKernel(format!("power exponent nu must lie in (0, 2), got {nu}")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidKernel(format!("power scale must be positive, got {scale}")));
        }
        Self::build(KernelFamily::TruncatedPower { nu, scale }, 0.0)
    }

    pub fn atoms(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidKernel("atoms kernel needs at least one atom".into()));
        }
        let mut list = Vec::with_capacity(atoms.len());
        for (theta, mass) in atoms {
            if !(0.0..=PI).contains(&theta) {
                return Err(Error::InvalidKernel(format!("atom angle {theta} outside [0, pi]")));
            }
            if !(mass > 0.0 && mass.is_finite()) {
                return Err(Error::InvalidKernel(format!("atom mass must be positive, got {mass}")));
            }
            list.push(Atom { theta, mass });
        }
        Self::build(KernelFamily::Atoms(list), 0.0)
    }

    /// A single atom: every collision has scattering angle `theta`.
    pub fn atom(theta: f64, mass: f64) -> Result<Self> {
        Self::atoms(vec![(theta, mass)])
    }

    fn build(family: KernelFamily, cutoff: f64) -> Result<Self> {
        let total_mass = total_mass(&family, cutoff);
        let levy_intensity = levy(&family, cutoff);
        Ok(Self { family, cutoff, total_mass, levy_intensity })
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// `b_eps`, the collision rate of each particle.
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn levy_intensity(&self) -> f64 {
        self.levy_intensity
    }

    pub fn is_finite_mass(&self) -> bool {
        self.total_mass.is_finite()
    }

    /// Restricts the kernel to `theta >= eps` (composing with any existing
    /// cut-off).
    pub fn with_cutoff(&self, eps: f64) -> Result<Self> {
        grad_cutoff(self, eps)
    }

    pub fn sample_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        sample_theta(self, rng)
    }

    /// Parses the kernel grammar used in configuration files:
    /// `uniform(mass=..., eps=...)`, `power(nu=..., eps=..., scale=...)`,
    /// `atoms([(theta, mass), ...], eps=...)`. Numbers may be written as
    /// `pi`, `pi/k` or `k*pi`.
    pub fn parse(spec: &str) -> Result<Self> {
        parse_kernel(spec)
    }
}

/// `lambda_eps = int_{[eps, pi]} sin^2(theta) b(dtheta)`.
pub fn levy_intensity(kernel: &AngularKernel) -> f64 {
    kernel.levy_intensity
}

/// Grad's cut-off `b_eps = 1_{theta >= eps} b`.
pub fn grad_cutoff(kernel: &AngularKernel, eps: f64) -> Result<AngularKernel> {
    if !(eps >= 0.0 && eps <= PI) {
        return Err(Error::InvalidKernel(format!("cut-off must lie in [0, pi], got {eps}")));
    }
    let cutoff = kernel.cutoff.max(eps);
    if cutoff <= 0.0 && matches!(kernel.family, KernelFamily::TruncatedPower { .. }) {
        return Err(Error::InfiniteMass);
    }
    AngularKernel::build(kernel.family.clone(), cutoff)
}

/// Samples `theta ~ b_eps(dtheta) / b_eps`.
pub fn sample_theta<R: Rng + ?Sized>(kernel: &AngularKernel, rng: &mut R) -> Result<f64> {
    if !kernel.total_mass.is_finite() {
        return Err(Error::InfiniteMass);
    }
    if !(kernel.total_mass > 0.0) {
        return Err(Error::ZeroMassKernel);
    }
    let eps = kernel.cutoff;
    let u: f64 = rng.random();
    let theta = match &kernel.family {
        KernelFamily::Uniform { .. } => eps + u * (PI - eps),
        KernelFamily::TruncatedPower { nu, .. } => {
            let a = eps.powf(-nu);
            let b = PI.powf(-nu);
            (a - u * (a - b)).powf(-1.0 / nu).clamp(eps, PI)
        }
        KernelFamily::Atoms(atoms) => {
            let target = u * kernel.total_mass;
            let mut acc = 0.0;
            let mut chosen = None;
            for atom in atoms.iter().filter(|a| a.theta >= eps) {
                acc += atom.mass;
                chosen = Some(atom.theta);
                if target < acc {
                    break;
                }
            }
            chosen.expect("positive mass implies at least one active atom")
        }
    };
    Ok(theta)
}

fn total_mass(family: &KernelFamily, eps: f64) -> f64 {
    match family {
        KernelFamily::Uniform { mass } => mass / PI * (PI - eps),
        KernelFamily::TruncatedPower { nu, scale } => {
            if eps <= 0.0 {
                f64::INFINITY
            } else {
                scale * (eps.powf(-nu) - PI.powf(-nu)) / nu
            }
        }
        KernelFamily::Atoms(atoms) => atoms.iter().filter(|a| a.theta >= eps).map(|a| a.mass).sum(),
    }
}

fn levy(family: &KernelFamily, eps: f64) -> f64 {
    match family {
        KernelFamily::Uniform { mass } => {
            mass / PI * quadrature::integrate(|t| t.sin().powi(2), eps, PI, QUAD_TOL)
        }
        KernelFamily::TruncatedPower { nu, scale } => {
            // theta = s^{1/(2-nu)} removes the theta^{1-nu} endpoint behaviour
            let k = 2.0 - nu;
            let sinc_sq = |t: f64| if t == 0.0 { 1.0 } else { (t.sin() / t).powi(2) };
            let g = |s: f64| sinc_sq(s.max(0.0).powf(1.0 / k));
            scale / k * quadrature::integrate(g, eps.powf(k), PI.powf(k), QUAD_TOL)
        }
        KernelFamily::Atoms(atoms) => atoms
            .iter()
            .filter(|a| a.theta >= eps)
            .map(|a| a.theta.sin().powi(2) * a.mass)
            .sum(),
    }
}

impl fmt::Display for AngularKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.family {
            KernelFamily::Uniform { mass } => write!(f, "uniform(mass={mass}, eps={})", self.cutoff),
            KernelFamily::TruncatedPower { nu, scale } => {
                write!(f, "power(nu={nu}, eps={}", self.cutoff)?;
                if *scale != 1.0 {
                    write!(f, ", scale={scale}")?;
                }
                write!(f, ")")
            }
            KernelFamily::Atoms(atoms) => {
                write!(f, "atoms([")?;
                for (i, a) in atoms.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "({}, {})", a.theta, a.mass)?;
                }
                write!(f, "], eps={})", self.cutoff)
            }
        }
    }
}

/// Parses a number, accepting `pi`, `pi/k`, `k*pi` and `k*pi/m`.
pub fn parse_number(text: &str) -> Result<f64> {
    let t: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let bad = || Error::InvalidKernel(format!("cannot parse number '{text}'"));
    if let Ok(v) = t.parse::<f64>() {
        return Ok(v);
    }
    let (numer, denom) = match t.split_once('/') {
        Some((a, b)) => (a.to_string(), b.parse::<f64>().map_err(|_| bad())?),
        None => (t.clone(), 1.0),
    };
    let value = if numer == "pi" {
        PI
    } else if let Some(k) = numer.strip_suffix("*pi") {
        k.parse::<f64>().map_err(|_| bad())? * PI
    } else {
        numer.parse::<f64>().map_err(|_| bad())?
    };
    Ok(value / denom)
}

fn parse_kernel(spec: &str) -> Result<AngularKernel> {
    let spec = spec.trim();
    let bad = |msg: &str| Error::InvalidKernel(format!("{msg} in '{spec}'"));
    let open = spec.find('(').ok_or_else(|| bad("missing '('"))?;
    if !spec.ends_with(')') {
        return Err(bad("missing ')'"));
    }
    let name = spec[..open].trim();
    let body = &spec[open + 1..spec.len() - 1];

    let (atom_list, rest) = if name == "atoms" {
        let lb = body.find('[').ok_or_else(|| bad("atoms needs a [...] list"))?;
        let rb = body.rfind(']').ok_or_else(|| bad("unterminated atom list"))?;
        (Some(parse_atom_list(&body[lb + 1..rb])?), body[rb + 1..].to_string())
    } else {
        (None, body.to_string())
    };

    let mut params: Vec<(String, f64)> = Vec::new();
    for item in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = item.split_once('=').ok_or_else(|| bad("expected key=value"))?;
        params.push((k.trim().to_string(), parse_number(v)?));
    }
    let get = |key: &str| params.iter().find(|(k, _)| k == key).map(|(_, v)| *v);
    let allowed: &[&str] = match name {
        "uniform" => &["mass", "eps"],
        "power" => &["nu", "eps", "scale"],
        "atoms" => &["eps"],
        _ => return Err(bad("unknown kernel family")),
    };
    if let Some((k, _)) = params.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
        return Err(bad(&format!("unknown parameter '{k}'")));
    }

    let kernel = match name {
        "uniform" => AngularKernel::uniform(get("mass").unwrap_or(1.0))?,
        "power" => AngularKernel::power(
            get("nu").ok_or_else(|| bad("power needs nu"))?,
            get("scale").unwrap_or(1.0),
        )?,
        _ => AngularKernel::atoms(atom_list.expect("parsed above"))?,
    };
    match get("eps") {
        Some(eps) if eps != 0.0 || !kernel.is_finite_mass() => grad_cutoff(&kernel, eps),
        _ => Ok(kernel),
    }
}

fn parse_atom_list(list: &str) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    let mut rest = list.trim();
    while !rest.is_empty() {
        rest = rest.trim_start_matches(|c: char| c == ',' || c.is_whitespace());
        if rest.is_empty() {
            break;
        }
        if !rest.starts_with('(') {
            return Err(Error::InvalidKernel(format!("expected '(' in atom list '{list}'")));
        }
        let close = rest
            .find(')')
            .ok_or_else(|| Error::InvalidKernel(format!("unterminated atom in '{list}'")))?;
        let pair = &rest[1..close];
        let (a, b) = pair
            .split_once(',')
            .ok_or_else(|| Error::InvalidKernel(format!("atom '({pair})' needs (theta, mass)")))?;
        out.push((parse_number(a)?, parse_number(b)?));
        rest = &rest[close + 1..];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn single_atom() {
        let k = AngularKernel::atom(FRAC_PI_2, 2.5).unwrap();
        assert_eq!(k.levy_intensity(), 2.5);
        assert_eq!(k.total_mass(), 2.5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(k.sample_theta(&mut rng).unwrap(), FRAC_PI_2);
        }
    }

    #[test]
    fn uniform_density_one_has_lambda_half_pi() {
        // density 1 on [0, pi] has total mass pi; closed form int sin^2 = pi/2
        let k = AngularKernel::uniform(PI).unwrap();
        assert!((k.levy_intensity() - FRAC_PI_2).abs() < 1e-12);
        let eps = 0.3;
        let kc = k.with_cutoff(eps).unwrap();
        let closed = (PI - eps) / 2.0 + (2.0 * eps).sin() / 4.0;
        assert!((kc.levy_intensity() - closed).abs() < 1e-12);
        assert!((kc.total_mass() - (PI - eps)).abs() < 1e-12);
    }

    #[test]
    fn power_kernel_cutoff_mass_matches_quadrature() {
        let k = AngularKernel::power(0.5, 1.0).unwrap();
        assert_eq!(k.total_mass(), f64::INFINITY);
        let kc = grad_cutoff(&k, 0.1).unwrap();
        // independent quadrature of int_{0.1}^{pi} theta^{-3/2}
        let oracle = quadrature::integrate(|t| t.powf(-1.5), 0.1, PI, 1e-13);
        assert!((kc.total_mass() - oracle).abs() < 1e-10 * oracle);
        // lambda by direct quadrature on [eps, pi]
        let lam = quadrature::integrate(|t| t.sin().powi(2) * t.powf(-1.5), 0.1, PI, 1e-13);
        assert!((kc.levy_intensity() - lam).abs() < 1e-10 * lam);
    }

    #[test]
    fn levy_intensity_nonincreasing_and_convergent() {
        for k in [
            AngularKernel::power(1.5, 1.0).unwrap(),
            AngularKernel::power(0.3, 2.0).unwrap(),
            AngularKernel::uniform(1.0).unwrap(),
            AngularKernel::atoms(vec![(0.01, 3.0), (1.0, 1.0), (3.0, 0.5)]).unwrap(),
        ] {
            let full = k.levy_intensity();
            assert!(full.is_finite() && full > 0.0);
            let mut gaps = Vec::new();
            for eps in [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 0.1, 0.5, 1.0, 2.0, 3.0].iter().rev() {
                let cut = grad_cutoff(&k, *eps).unwrap();
                assert!(cut.levy_intensity() <= full * (1.0 + 1e-12));
                assert!(cut.total_mass().is_finite());
                gaps.push(full - cut.levy_intensity());
            }
            // gaps shrink as eps decreases
            for w in gaps.windows(2) {
                assert!(w[1] <= w[0] + 1e-12, "{gaps:?}");
            }
            assert!(gaps.last().unwrap().abs() < 1e-3 * full.max(1.0));
        }
    }

    #[test]
    fn cutoff_edge_cases() {
        let atoms = AngularKernel::atoms(vec![(0.5, 1.0), (2.0, 2.0)]).unwrap();
        let cut = grad_cutoff(&atoms, 0.25).unwrap();
        assert_eq!(cut.total_mass(), atoms.total_mass());
        assert_eq!(cut.levy_intensity(), atoms.levy_intensity());

        let u = AngularKernel::uniform(1.0).unwrap();
        let zero = grad_cutoff(&u, PI).unwrap();
        assert_eq!(zero.total_mass(), 0.0);
        assert_eq!(zero.levy_intensity(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(zero.sample_theta(&mut rng), Err(Error::ZeroMassKernel));

        let p = AngularKernel::power(1.0, 1.0).unwrap();
        assert_eq!(grad_cutoff(&p, 0.0), Err(Error::InfiniteMass));
        assert!(grad_cutoff(&p, -0.1).is_err());
        assert_eq!(p.sample_theta(&mut rng), Err(Error::InfiniteMass));
        assert!(AngularKernel::power(2.0, 1.0).is_err());
        assert!(AngularKernel::power(0.0, 1.0).is_err());
    }

    #[test]
    fn uniform_sampling_mean() {
        let k = AngularKernel::uniform(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let mean = (0..n).map(|_| k.sample_theta(&mut rng).unwrap()).sum::<f64>() / n as f64;
        let se = PI / 12f64.sqrt() / (n as f64).sqrt();
        assert!((mean - FRAC_PI_2).abs() < 3.0 * se);
    }

    #[test]
    fn power_sampling_matches_cdf() {
        let nu = 1.2;
        let eps = 0.05;
        let k = AngularKernel::power(nu, 1.0).unwrap().with_cutoff(eps).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mut xs: Vec<f64> = (0..n).map(|_| k.sample_theta(&mut rng).unwrap()).collect();
        assert!(xs.iter().all(|&x| x >= eps && x <= PI));
        xs.sort_by(f64::total_cmp);
        let cdf = |t: f64| (eps.powf(-nu) - t.powf(-nu)) / (eps.powf(-nu) - PI.powf(-nu));
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS distance {ks}");
    }

    #[test]
    fn sampled_angles_respect_cutoff() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let eps = 0.7;
        for k in [
            AngularKernel::uniform(1.0).unwrap(),
            AngularKernel::power(0.5, 1.0).unwrap(),
            AngularKernel::atoms(vec![(0.1, 5.0), (0.7, 1.0), (2.0, 1.0)]).unwrap(),
        ] {
            let k = grad_cutoff(&k, eps).unwrap();
            for _ in 0..10_000 {
                assert!(k.sample_theta(&mut rng).unwrap() >= eps);
            }
        }
    }

    #[test]
    fn atom_sampling_frequencies() {
        let k = AngularKernel::atoms(vec![(0.5, 1.0), (1.5, 3.0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 40_000;
        let hits = (0..n).filter(|_| k.sample_theta(&mut rng).unwrap() == 1.5).count();
        let p = 0.75;
        assert!((hits as f64 - p * n as f64).abs() < 4.0 * (n as f64 * p * (1.0 - p)).sqrt());
    }

    #[test]
    fn grammar_round_trip() {
        let k = AngularKernel::parse("uniform(mass=2, eps=0.1)").unwrap();
        assert_eq!(k.cutoff(), 0.1);
        assert!((k.total_mass() - 2.0 / PI * (PI - 0.1)).abs() < 1e-15);
        assert_eq!(AngularKernel::parse(&k.to_string()).unwrap(), k);

        let p = AngularKernel::parse("power(nu=0.5, eps=0.01)").unwrap();
        assert_eq!(AngularKernel::parse(&p.to_string()).unwrap(), p);

        let a = AngularKernel::parse("atoms([(pi/2, 1), (0.3, 2.5)])").unwrap();
        assert_eq!(a.levy_intensity(), 1.0 + 0.3f64.sin().powi(2) * 2.5);
        assert_eq!(AngularKernel::parse(&a.to_string()).unwrap(), a);

        assert!(!AngularKernel::parse("power(nu=0.5)").unwrap().is_finite_mass());
        assert!(AngularKernel::parse("power(nu=0.5, eps=0)").is_err());
        assert!(AngularKernel::parse("gauss(mass=1)").is_err());
        assert!(AngularKernel::parse("uniform(mass=1, nu=2)").is_err());
        assert_eq!(parse_number("2*pi/3").unwrap(), 2.0 * PI / 3.0);
    }
}
