//! Communication rate ψ, velocity kernel σ and noise law `a`.
//!
//! All kernels are immutable once built and validated. The supported
//! families satisfy the structural assumptions used by every estimate in this
//! crate: ψ is bounded and even, σ is even with `σ(u) ≤ c_σ⟨u⟩^γ` for some
//! `γ ∈ [0, 2]`, and `a` is a symmetric probability law. The discrete and
//! degenerate noise laws are not densities; they are admitted because they
//! make every u-integral an exact finite sum.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quad;

/// Relative tolerance for radial quadrature of noise moments.
pub const MOMENT_REL_TOL: f64 = 1e-10;

pub fn norm_sq(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum()
}

pub fn dist_sq(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// The bracket `⟨u⟩ = (1 + |u|²)^{1/2}`.
pub fn bracket(u: &[f64]) -> f64 {
    (1.0 + norm_sq(u)).sqrt()
}

/// Communication rate ψ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum PsiKernel {
    /// ψ ≡ c.
    Constant { c: f64 },
    /// ψ(r) = coef / (1 + |r|²)^{exponent/2}.
    Rational { coef: f64, exponent: f64 },
}

impl PsiKernel {
    pub fn constant(c: f64) -> Result<Self> {
        let k = PsiKernel::Constant { c };
        k.validate()?;
        Ok(k)
    }

    pub fn rational(coef: f64, exponent: f64) -> Result<Self> {
        let k = PsiKernel::Rational { coef, exponent };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PsiKernel::Constant { c } => {
                if !(c.is_finite() && c >= 0.0) {
                    return Err(invalid(format!("psi constant must be finite and >= 0, got {c}")));
                }
            }
            PsiKernel::Rational { coef, exponent } => {
                if !(coef.is_finite() && coef > 0.0) {
                    return Err(invalid(format!("psi coefficient must be > 0, got {coef}")));
                }
                if !(exponent.is_finite() && exponent >= 0.0) {
                    return Err(invalid(format!("psi exponent must be >= 0, got {exponent}")));
                }
            }
        }
        Ok(())
    }

    /// Sup norm of ψ.
    pub fn sup(&self) -> f64 {
        match *self {
            PsiKernel::Constant { c } => c,
            PsiKernel::Rational { coef, .. } => coef,
        }
    }

    /// ψ evaluated from `|r|²`.
    #[inline]
    pub fn eval_norm_sq(&self, r_sq: f64) -> f64 {
        match *self {
            PsiKernel::Constant { c } => c,
            PsiKernel::Rational { coef, exponent } => {
                if exponent == 2.0 {
                    coef / (1.0 + r_sq)
                } else {
                    coef * (1.0 + r_sq).powf(-0.5 * exponent)
                }
            }
        }
    }

    pub fn eval(&self, r: &[f64]) -> f64 {
        self.eval_norm_sq(norm_sq(r))
    }
}

/// Velocity kernel σ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaKernel {
    /// σ ≡ c (growth exponent 0).
    Constant { c: f64 },
    /// σ(u) = c_sigma ⟨u⟩^gamma with gamma in [0, 2].
    BracketPower { c_sigma: f64, gamma: f64 },
}

impl SigmaKernel {
    pub fn constant(c: f64) -> Result<Self> {
        let k = SigmaKernel::Constant { c };
        k.validate()?;
        Ok(k)
    }

    pub fn bracket_power(c_sigma: f64, gamma: f64) -> Result<Self> {
        let k = SigmaKernel::BracketPower { c_sigma, gamma };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SigmaKernel::Constant { c } => {
                if !(c.is_finite() && c >= 0.0) {
                    return Err(invalid(format!("sigma constant must be finite and >= 0, got {c}")));
                }
            }
            SigmaKernel::BracketPower { c_sigma, gamma } => {
                if !(c_sigma.is_finite() && c_sigma > 0.0) {
                    return Err(invalid(format!("c_sigma must be > 0, got {c_sigma}")));
                }
                if !(0.0..=2.0).contains(&gamma) {
                    return Err(invalid(format!("gamma must lie in [0, 2], got {gamma}")));
                }
            }
        }
        Ok(())
    }

    pub fn gamma(&self) -> f64 {
        match *self {
            SigmaKernel::Constant { .. } => 0.0,
            SigmaKernel::BracketPower { gamma, .. } => gamma,
        }
    }

    pub fn c_sigma(&self) -> f64 {
        match *self {
            SigmaKernel::Constant { c } => c,
            SigmaKernel::BracketPower { c_sigma, .. } => c_sigma,
        }
    }

    /// Sup norm, if σ is bounded (γ = 0).
    pub fn sup(&self) -> Option<f64> {
        (self.gamma() == 0.0).then(|| self.c_sigma())
    }

    /// Upper bound of σ over `|u| ≤ radius`.
    pub fn bound_within(&self, radius: f64) -> f64 {
        let gamma = self.gamma();
        if gamma == 0.0 {
            self.c_sigma()
        } else {
            self.c_sigma() * (1.0 + radius * radius).powf(0.5 * gamma)
        }
    }

    #[inline]
    pub fn eval_norm_sq(&self, u_sq: f64) -> f64 {
        match *self {
            SigmaKernel::Constant { c } => c,
            SigmaKernel::BracketPower { c_sigma, gamma } => {
                if gamma == 0.0 {
                    c_sigma
                } else if gamma == 2.0 {
                    c_sigma * (1.0 + u_sq)
                } else {
                    c_sigma * (1.0 + u_sq).powf(0.5 * gamma)
                }
            }
        }
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        self.eval_norm_sq(norm_sq(u))
    }
}

/// Symmetric noise law `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseDensity {
    /// Centred Gaussian with diagonal covariance `diag(std²)`.
    Gaussian { std: Vec<f64> },
    /// Uniform law on the centred ball of the given radius.
    UniformBall { radius: f64, dim: usize },
    /// Atoms at ±atom with weight ½ each.
    SymmetricDiscrete { atom: Vec<f64> },
    /// Point mass at the origin.
    DegenerateZero { dim: usize },
}

impl NoiseDensity {
    pub fn gaussian(std: Vec<f64>) -> Result<Self> {
        let n = NoiseDensity::Gaussian { std };
        n.validate()?;
        Ok(n)
    }

    pub fn standard_gaussian(dim: usize) -> Self {
        NoiseDensity::Gaussian { std: vec![1.0; dim] }
    }

    pub fn uniform_ball(radius: f64, dim: usize) -> Result<Self> {
        let n = NoiseDensity::UniformBall { radius, dim };
        n.validate()?;
        Ok(n)
    }

    pub fn symmetric_discrete(atom: Vec<f64>) -> Result<Self> {
        let n = NoiseDensity::SymmetricDiscrete { atom };
        n.validate()?;
        Ok(n)
    }

    pub fn degenerate_zero(dim: usize) -> Self {
        NoiseDensity::DegenerateZero { dim }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(invalid("noise dimension must be >= 1"));
        }
        match self {
            NoiseDensity::Gaussian { std } => {
                if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                    return Err(invalid("gaussian std entries must be finite and > 0"));
                }
            }
            NoiseDensity::UniformBall { radius, .. } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(invalid(format!("ball radius must be > 0, got {radius}")));
                }
            }
            NoiseDensity::SymmetricDiscrete { atom } => {
                if atom.iter().any(|a| !a.is_finite()) {
                    return Err(invalid("discrete atom must be finite"));
                }
            }
            NoiseDensity::DegenerateZero { .. } => {}
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            NoiseDensity::Gaussian { std } => std.len(),
            NoiseDensity::UniformBall { dim, .. } | NoiseDensity::DegenerateZero { dim } => *dim,
            NoiseDensity::SymmetricDiscrete { atom } => atom.len(),
        }
    }

    /// True for the non-density laws kept as numerical devices.
    pub fn is_density(&self) -> bool {
        matches!(self, NoiseDensity::Gaussian { .. } | NoiseDensity::UniformBall { .. })
    }

    /// Draw one sample into `out` (length `dim`).
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            NoiseDensity::Gaussian { std } => {
                for (o, s) in out.iter_mut().zip(std) {
                    let z: f64 = StandardNormal.sample(rng);
                    *o = s * z;
                }
            }
            NoiseDensity::UniformBall { radius, dim } => {
                let mut n2 = 0.0;
                for o in out.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *o = z;
                    n2 += z * z;
                }
                let u: f64 = rng.random();
                let scale = radius * u.powf(1.0 / *dim as f64) / n2.sqrt();
                out.iter_mut().for_each(|o| *o *= scale);
            }
            NoiseDensity::SymmetricDiscrete { atom } => {
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                for (o, a) in out.iter_mut().zip(atom) {
                    *o = sign * a;
                }
            }
            NoiseDensity::DegenerateZero { .. } => out.iter_mut().for_each(|o| *o = 0.0),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.sample_into(rng, &mut out);
        out
    }

    /// λ_{2p} = ∫ |u|^{2p} a(u) du.
    pub fn moment(&self, p: f64) -> Result<f64> {
        if !(p.is_finite() && p >= 0.0) {
            return Err(invalid(format!("moment order p must be >= 0, got {p}")));
        }
        if p == 0.0 {
            return Ok(1.0);
        }
        match self {
            NoiseDensity::DegenerateZero { .. } => Ok(0.0),
            NoiseDensity::SymmetricDiscrete { atom } => Ok(norm_sq(atom).powf(p)),
            NoiseDensity::UniformBall { radius, dim } => {
                let d = *dim as f64;
                Ok(d / (d + 2.0 * p) * radius.powf(2.0 * p))
            }
            NoiseDensity::Gaussian { std } => gaussian_moment(std, p),
        }
    }

    /// c(δ, κ) = ∫ e^{δ|u|^κ} a(u) du.
    pub fn exp_moment(&self, delta: f64, kappa: f64) -> Result<f64> {
        if !(delta.is_finite() && delta >= 0.0 && kappa > 0.0 && kappa.is_finite()) {
            return Err(invalid("exponential moment needs delta >= 0 and kappa > 0"));
        }
        match self {
            NoiseDensity::DegenerateZero { .. } => Ok(1.0),
            NoiseDensity::SymmetricDiscrete { atom } => Ok((delta * norm_sq(atom).sqrt().powf(kappa)).exp()),
            NoiseDensity::UniformBall { radius, dim } => {
                let d = *dim as i32;
                let r = *radius;
                let v = quad::integrate(
                    |x: f64| (delta * x.powf(kappa)).exp() * d as f64 * x.powi(d - 1) / r.powi(d),
                    0.0,
                    r,
                    MOMENT_REL_TOL,
                    0.0,
                );
                Ok(v)
            }
            NoiseDensity::Gaussian { std } => {
                if kappa > 2.0 || (kappa == 2.0 && delta * 2.0 * max_of(std).powi(2) >= 1.0) {
                    return Ok(f64::INFINITY);
                }
                if !is_isotropic(std) {
                    return Err(Error::Unsupported(
                        "exponential moment of an anisotropic gaussian".into(),
                    ));
                }
                let s = std[0];
                Ok(radial_chi_expectation(std.len(), |rho| (delta * (s * rho).powf(kappa)).exp()))
            }
        }
    }
}

fn max_of(x: &[f64]) -> f64 {
    x.iter().cloned().fold(0.0, f64::max)
}

fn is_isotropic(std: &[f64]) -> bool {
    std.iter().all(|s| *s == std[0])
}

/// E f(ρ) for ρ ~ chi with `dim` degrees of freedom, by radial quadrature.
fn radial_chi_expectation<F: Fn(f64) -> f64>(dim: usize, f: F) -> f64 {
    let k = dim as i32 - 1;
    let weight = |rho: f64| rho.powi(k) * (-0.5 * rho * rho).exp();
    let num = quad::integrate_half_line(|rho| f(rho) * weight(rho), MOMENT_REL_TOL * 1e-2);
    let den = quad::integrate_half_line(weight, MOMENT_REL_TOL * 1e-2);
    num / den
}

/// E|u|^{2p} for u ~ N(0, diag(std²)).
///
/// Written as E ρ^{2p} · E_θ |std ⊙ θ|^{2p} with ρ chi-distributed and θ
/// uniform on the sphere; the angular factor is a quadrature for d ≤ 3.
fn gaussian_moment(std: &[f64], p: f64) -> Result<f64> {
    let d = std.len();
    let radial = radial_chi_expectation(d, |rho| rho.powf(2.0 * p));
    if is_isotropic(std) {
        return Ok(std[0].powf(2.0 * p) * radial);
    }
    let half_pi = std::f64::consts::FRAC_PI_2;
    let angular = match d {
        2 => {
            let (a, b) = (std[0] * std[0], std[1] * std[1]);
            quad::integrate(
                |phi: f64| (a * phi.cos().powi(2) + b * phi.sin().powi(2)).powf(p),
                0.0,
                half_pi,
                MOMENT_REL_TOL * 1e-2,
                0.0,
            ) / half_pi
        }
        3 => {
            let (a, b, c) = (std[0] * std[0], std[1] * std[1], std[2] * std[2]);
            quad::integrate(
                |z: f64| {
                    let s2 = 1.0 - z * z;
                    quad::integrate(
                        |phi: f64| {
                            (s2 * (a * phi.cos().powi(2) + b * phi.sin().powi(2)) + c * z * z).powf(p)
                        },
                        0.0,
                        half_pi,
                        MOMENT_REL_TOL * 1e-2,
                        0.0,
                    ) / half_pi
                },
                0.0,
                1.0,
                MOMENT_REL_TOL * 1e-2,
                0.0,
            )
        }
        _ => {
            return Err(Error::Unsupported(format!(
                "moments of anisotropic gaussian noise in dimension {d} (only d <= 3)"
            )))
        }
    };
    Ok(radial * angular)
}

/// The kernel triple (ψ, σ, a).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSet {
    pub psi: PsiKernel,
    pub sigma: SigmaKernel,
    pub noise: NoiseDensity,
}

impl KernelSet {
    pub fn new(psi: PsiKernel, sigma: SigmaKernel, noise: NoiseDensity) -> Result<Self> {
        psi.validate()?;
        sigma.validate()?;
        noise.validate()?;
        Ok(KernelSet { psi, sigma, noise })
    }

    pub fn dim(&self) -> usize {
        self.noise.dim()
    }

    /// ψ(r_k − r_j) σ(v_k − v_j).
    #[inline]
    pub fn pair_rate(&self, r_k: &[f64], v_k: &[f64], r_j: &[f64], v_j: &[f64]) -> f64 {
        self.psi.eval_norm_sq(dist_sq(r_k, r_j)) * self.sigma.eval_norm_sq(dist_sq(v_k, v_j))
    }
}
