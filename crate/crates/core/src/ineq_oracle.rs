//! Exact evaluation of the moment inequalities on finite configurations.
//!
//! The noise is the symmetric two-point law `±u₀`, so every `u`-integral is an
//! exact two-term average and `λ_{2p} = |u₀|^{2p}`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exec::Exec;
use crate::kernels::{bracket, dist_sq, norm_sq, PsiKernel, SigmaKernel};
use crate::rng::{replica_rng, replica_seed};

/// A finite configuration with its kernels and two-point noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSample {
    pub n: usize,
    pub d: usize,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub psi: PsiKernel,
    pub sigma: SigmaKernel,
    /// Atom of the noise `½(δ_{u₀} + δ_{−u₀})`.
    pub u0: Vec<f64>,
    pub p: f64,
}

impl ConfigSample {
    pub fn new(
        d: usize,
        positions: Vec<f64>,
        velocities: Vec<f64>,
        psi: PsiKernel,
        sigma: SigmaKernel,
        u0: Vec<f64>,
        p: f64,
    ) -> Result<Self> {
        if d == 0 || !positions.len().is_multiple_of(d) || positions.len() != velocities.len() || positions.is_empty() {
            return Err(invalid("positions and velocities must be nonempty N x d arrays"));
        }
        if u0.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: u0.len() });
        }
        psi.validate()?;
        sigma.validate()?;
        if !(p.is_finite() && p > 0.0) {
            return Err(invalid(format!("p must be > 0, got {p}")));
        }
        Ok(ConfigSample { n: positions.len() / d, d, positions, velocities, psi, sigma, u0, p })
    }

    pub fn gamma(&self) -> f64 {
        self.sigma.gamma()
    }

    fn r(&self, k: usize) -> &[f64] {
        &self.positions[k * self.d..(k + 1) * self.d]
    }

    fn v(&self, k: usize) -> &[f64] {
        &self.velocities[k * self.d..(k + 1) * self.d]
    }

    /// `λ_{2p}` of the two-point noise.
    pub fn lambda_2p(&self) -> f64 {
        norm_sq(&self.u0).powf(self.p)
    }

    fn weight(&self, k: usize, j: usize) -> f64 {
        self.psi.eval_norm_sq(dist_sq(self.r(k), self.r(j))) * self.sigma.eval_norm_sq(dist_sq(self.v(k), self.v(j)))
    }

    /// `½ Σ_± f(v_j ± u₀)`.
    fn noise_avg<F: Fn(&[f64]) -> f64>(&self, j: usize, f: F) -> f64 {
        let vj = self.v(j);
        let plus: Vec<f64> = vj.iter().zip(&self.u0).map(|(a, b)| a + b).collect();
        let minus: Vec<f64> = vj.iter().zip(&self.u0).map(|(a, b)| a - b).collect();
        0.5 * (f(&plus) + f(&minus))
    }

    fn pair_sum<F: Fn(usize, usize) -> f64>(&self, f: F) -> f64 {
        let mut s = 0.0;
        for k in 0..self.n {
            for j in 0..self.n {
                s += f(k, j);
            }
        }
        s
    }
}

/// Left side, right side and verdict of one inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IneqCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl IneqCheck {
    fn new(lhs: f64, rhs: f64) -> Self {
        IneqCheck { lhs, rhs, holds: lhs <= rhs }
    }

    /// `lhs / rhs`, with `0/0 = 0` (the check holds iff this is ≤ 1).
    pub fn ratio(&self) -> f64 {
        if self.lhs <= 0.0 {
            0.0
        } else if self.rhs <= 0.0 {
            f64::INFINITY
        } else {
            self.lhs / self.rhs
        }
    }
}

/// Drift sum and its constant-free bound `λ_{2p} 2^{3p} (1/N) Σ⟨v_j⟩^{2p−2+γ}`.
pub fn drift_terms(cs: &ConfigSample) -> Result<(f64, f64)> {
    if cs.p < 2.0 {
        return Err(invalid(format!("drift inequality needs p >= 2, got {}", cs.p)));
    }
    let p2 = 2.0 * cs.p;
    let nf = cs.n as f64;
    let lhs = cs.pair_sum(|k, j| {
        let w = cs.weight(k, j);
        if w == 0.0 {
            return 0.0;
        }
        let vk = norm_sq(cs.v(k)).powf(cs.p);
        w * cs.noise_avg(j, |x| norm_sq(x).powf(cs.p) - vk)
    }) / (nf * nf);
    let unit = cs.lambda_2p() * 2f64.powf(3.0 * cs.p) / nf
        * (0..cs.n).map(|j| bracket(cs.v(j)).powf(p2 - 2.0 + cs.gamma())).sum::<f64>();
    Ok((lhs, unit))
}

pub fn check_drift_inequality(cs: &ConfigSample, c: f64) -> Result<IneqCheck> {
    let (lhs, unit) = drift_terms(cs)?;
    Ok(IneqCheck::new(lhs, c * unit))
}

/// Absolute-value sum and its constant-free bound `λ_{2p} 2^{2p} (1/N) Σ⟨v_j⟩^{2p+γ}`.
pub fn abs_terms(cs: &ConfigSample) -> Result<(f64, f64)> {
    if cs.p < 0.5 {
        return Err(invalid(format!("absolute inequality needs p >= 1/2, got {}", cs.p)));
    }
    let p2 = 2.0 * cs.p;
    let nf = cs.n as f64;
    let lhs = cs.pair_sum(|k, j| {
        let w = cs.weight(k, j);
        if w == 0.0 {
            return 0.0;
        }
        let vk = bracket(cs.v(k)).powf(p2);
        w * cs.noise_avg(j, |x| (bracket(x).powf(p2) - vk).abs())
    }) / (nf * nf);
    let unit = cs.lambda_2p() * 2f64.powf(p2) / nf
        * (0..cs.n).map(|j| bracket(cs.v(j)).powf(p2 + cs.gamma())).sum::<f64>();
    Ok((lhs, unit))
}

pub fn check_abs_inequality(cs: &ConfigSample, c: f64) -> Result<IneqCheck> {
    let (lhs, unit) = abs_terms(cs)?;
    Ok(IneqCheck::new(lhs, c * unit))
}

/// Exponential-moment inequality (bounded σ, no free constant):
/// `(1/N²)ΣΣ σ ∫|e^{δ⟨v_j+u⟩^κ} − e^{δ⟨v_k⟩^κ}| ≤ ‖σ‖∞(1 + e^δ c(δ,κ))/N Σ e^{δ⟨v_j⟩^κ}`.
pub fn check_exp_inequality(cs: &ConfigSample, delta: f64, kappa: f64) -> Result<IneqCheck> {
    let sigma_max = cs
        .sigma
        .sup()
        .ok_or_else(|| invalid("exponential inequality needs a bounded sigma (gamma = 0)"))?;
    if !(delta > 0.0 && delta.is_finite()) || !(kappa > 0.0 && kappa <= 1.0) {
        return Err(invalid("exponential inequality needs delta > 0 and kappa in (0,1]"));
    }
    let e = |x: &[f64]| (delta * bracket(x).powf(kappa)).exp();
    let nf = cs.n as f64;
    let lhs = cs.pair_sum(|k, j| {
        let s = cs.sigma.eval_norm_sq(dist_sq(cs.v(k), cs.v(j)));
        if s == 0.0 {
            return 0.0;
        }
        let ek = e(cs.v(k));
        s * cs.noise_avg(j, |x| (e(x) - ek).abs())
    }) / (nf * nf);
    let c_dk = (delta * norm_sq(&cs.u0).sqrt().powf(kappa)).exp();
    let rhs = sigma_max * (1.0 + delta.exp() * c_dk) / nf * (0..cs.n).map(|j| e(cs.v(j))).sum::<f64>();
    Ok(IneqCheck::new(lhs, rhs))
}

/// Residual of `ΣΣ ψσ(|v_j|^{2p} − |v_k|^{2p}) = 0` and the magnitude
/// `ΣΣ ψσ(|v_j|^{2p} + |v_k|^{2p})` it is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cancellation {
    pub residual: f64,
    pub scale: f64,
    pub holds: bool,
}

pub fn check_cancellation(cs: &ConfigSample) -> Cancellation {
    let pw: Vec<f64> = (0..cs.n).map(|k| norm_sq(cs.v(k)).powf(cs.p)).collect();
    let mut residual = 0.0;
    let mut scale = 0.0;
    for k in 0..cs.n {
        for j in 0..cs.n {
            let w = cs.weight(k, j);
            residual += w * (pw[j] - pw[k]);
            scale += w * (pw[j] + pw[k]);
        }
    }
    Cancellation { residual, scale, holds: residual.abs() <= 1e-9 * scale || residual == 0.0 }
}

/// Largest `lhs/rhs` of `⟨v_j⟩^{2p}⟨v_k⟩^γ ≤ (2p/(2p+γ))⟨v_j⟩^{2p+γ} + (γ/(2p+γ))⟨v_k⟩^{2p+γ}`
/// over all ordered pairs; the check holds iff it is ≤ 1 up to rounding.
pub fn check_young(cs: &ConfigSample) -> IneqCheck {
    let g = cs.gamma();
    let p2 = 2.0 * cs.p;
    let mut worst = IneqCheck { lhs: 0.0, rhs: 1.0, holds: true };
    let mut worst_ratio = 0.0;
    for j in 0..cs.n {
        for k in 0..cs.n {
            let (bj, bk) = (bracket(cs.v(j)), bracket(cs.v(k)));
            let lhs = bj.powf(p2) * bk.powf(g);
            let rhs = p2 / (p2 + g) * bj.powf(p2 + g) + g / (p2 + g) * bk.powf(p2 + g);
            let r = lhs / rhs;
            if r > worst_ratio {
                worst_ratio = r;
                worst = IneqCheck { lhs, rhs, holds: lhs <= rhs * (1.0 + 1e-12) };
            }
        }
    }
    worst
}

/// The certified inequalities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lemma {
    Drift,
    Abs,
    Exp,
    Cancellation,
    Young,
}

impl Lemma {
    pub const ALL: [Lemma; 5] = [Lemma::Drift, Lemma::Abs, Lemma::Exp, Lemma::Cancellation, Lemma::Young];

    pub fn name(self) -> &'static str {
        match self {
            Lemma::Drift => "drift",
            Lemma::Abs => "abs",
            Lemma::Exp => "exp",
            Lemma::Cancellation => "cancellation",
            Lemma::Young => "young",
        }
    }

    /// Whether the inequality carries an unspecified constant to calibrate.
    pub fn needs_calibration(self) -> bool {
        matches!(self, Lemma::Drift | Lemma::Abs)
    }
}

/// Ranges of the random configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub p: f64,
    pub gamma: f64,
    pub max_n: usize,
    pub max_d: usize,
    pub max_speed: f64,
    pub max_position: f64,
    /// Range of `|u₀|`.
    pub noise_radius: (f64, f64),
}

impl SampleSpec {
    pub fn new(p: f64, gamma: f64) -> Self {
        SampleSpec { p, gamma, max_n: 8, max_d: 3, max_speed: 5.0, max_position: 5.0, noise_radius: (1.0, 3.0) }
    }
}

/// Uniform direction scaled to a radius drawn uniformly from `[lo, hi]`.
fn random_vector<R: Rng + ?Sized>(rng: &mut R, d: usize, lo: f64, hi: f64) -> Vec<f64> {
    let radius = rng.random_range(lo..=hi);
    loop {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = norm_sq(&x);
        if n > 1e-12 && n <= 1.0 {
            let s = radius / n.sqrt();
            return x.into_iter().map(|c| c * s).collect();
        }
    }
}

/// Random configuration: `N ∈ [2, max_n]`, `d ∈ [1, max_d]`, `|v| ≤ max_speed`,
/// random kernel parameters. One in ten samples has all velocities equal.
pub fn random_sample<R: Rng + ?Sized>(spec: &SampleSpec, rng: &mut R) -> Result<ConfigSample> {
    let n = rng.random_range(2..=spec.max_n.max(2));
    let d = rng.random_range(1..=spec.max_d.max(1));
    let positions: Vec<f64> = (0..n * d).map(|_| rng.random_range(-spec.max_position..=spec.max_position)).collect();
    let clustered = rng.random_bool(0.1);
    let common = random_vector(rng, d, 0.0, spec.max_speed);
    let velocities: Vec<f64> = (0..n)
        .flat_map(|_| if clustered { common.clone() } else { random_vector(rng, d, 0.0, spec.max_speed) })
        .collect();
    let psi = if rng.random_bool(0.5) {
        PsiKernel::constant(rng.random_range(0.1..=2.0))?
    } else {
        PsiKernel::rational(rng.random_range(0.1..=2.0), rng.random_range(0.1..=3.0))?
    };
    let c_sigma = rng.random_range(0.1..=2.0);
    let sigma = if spec.gamma == 0.0 && rng.random_bool(0.5) {
        SigmaKernel::constant(c_sigma)?
    } else {
        SigmaKernel::bracket_power(c_sigma, spec.gamma)?
    };
    let u0 = random_vector(rng, d, spec.noise_radius.0, spec.noise_radius.1);
    ConfigSample::new(d, positions, velocities, psi, sigma, u0, spec.p)
}

/// Parameters of a certification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyConfig {
    pub lemma: Lemma,
    pub spec: SampleSpec,
    pub samples: usize,
    pub seed: u64,
    /// Safety factor applied to the fitted constant.
    pub calibration_factor: f64,
    /// `(δ, κ)` of the exponential inequality.
    pub delta: f64,
    pub kappa: f64,
}

impl CertifyConfig {
    pub fn new(lemma: Lemma, spec: SampleSpec, samples: usize, seed: u64) -> Self {
        CertifyConfig { lemma, spec, samples, seed, calibration_factor: 10.0, delta: 0.5, kappa: 1.0 }
    }
}

/// One line of the certification report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub lemma: Lemma,
    pub p: f64,
    pub gamma: f64,
    pub samples: usize,
    pub violations: usize,
    /// Largest `lhs/rhs` on the verification batch (≤ 1 means no violation);
    /// for the cancellation identity, the largest `|residual|/scale`.
    pub max_margin: f64,
    pub calibrated_c: Option<f64>,
}

fn batch(cfg: &CertifyConfig, batch_seed: u64, exec: Exec) -> Result<Vec<ConfigSample>> {
    exec.try_map(cfg.samples, |i| random_sample(&cfg.spec, &mut replica_rng(batch_seed, i as u64)))
}

/// Calibrate on one batch (when the inequality has a free constant) and
/// verify on an independent batch of the same size.
pub fn certify(cfg: &CertifyConfig, exec: Exec) -> Result<CertificationReport> {
    if cfg.samples == 0 {
        return Err(invalid("need at least one sample"));
    }
    let calibrated_c = if cfg.lemma.needs_calibration() {
        let cal = batch(cfg, replica_seed(cfg.seed, 0), exec)?;
        let ratios = exec.try_map(cal.len(), |i| {
            let (lhs, unit) = terms(cfg.lemma, &cal[i])?;
            Ok::<f64, Error>(if lhs <= 0.0 { 0.0 } else { lhs / unit })
        })?;
        let fitted = ratios.into_iter().fold(0.0, f64::max);
        if !fitted.is_finite() {
            return Err(invalid("calibration ratio is unbounded on the calibration batch"));
        }
        Some(cfg.calibration_factor * fitted)
    } else {
        None
    };
    let verify = batch(cfg, replica_seed(cfg.seed, 1), exec)?;
    let outcomes = exec.try_map(verify.len(), |i| {
        let cs = &verify[i];
        Ok::<(bool, f64), Error>(match cfg.lemma {
            Lemma::Drift | Lemma::Abs => {
                let (lhs, unit) = terms(cfg.lemma, cs)?;
                let c = IneqCheck::new(lhs, calibrated_c.unwrap_or(0.0) * unit);
                (c.holds, c.ratio())
            }
            Lemma::Exp => {
                let c = check_exp_inequality(cs, cfg.delta, cfg.kappa)?;
                (c.holds, c.ratio())
            }
            Lemma::Cancellation => {
                let c = check_cancellation(cs);
                (c.holds, if c.scale > 0.0 { c.residual.abs() / c.scale } else { c.residual.abs() })
            }
            Lemma::Young => {
                let c = check_young(cs);
                (c.holds, c.ratio())
            }
        })
    })?;
    Ok(CertificationReport {
        lemma: cfg.lemma,
        p: cfg.spec.p,
        gamma: cfg.spec.gamma,
        samples: cfg.samples,
        violations: outcomes.iter().filter(|(h, _)| !h).count(),
        max_margin: outcomes.iter().map(|(_, m)| *m).fold(0.0, f64::max),
        calibrated_c,
    })
}

fn terms(lemma: Lemma, cs: &ConfigSample) -> Result<(f64, f64)> {
    match lemma {
        Lemma::Drift => drift_terms(cs),
        Lemma::Abs => abs_terms(cs),
        _ => Err(invalid("only drift and abs have calibrated constants")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ones() -> (PsiKernel, SigmaKernel) {
        (PsiKernel::constant(1.0).unwrap(), SigmaKernel::constant(1.0).unwrap())
    }

    fn two_at_rest(p: f64) -> ConfigSample {
        let (psi, sigma) = ones();
        ConfigSample::new(1, vec![0.0, 1.0], vec![0.0, 0.0], psi, sigma, vec![1.0], p).unwrap()
    }

    #[test]
    fn drift_exact_two_particle_case() {
        let cs = two_at_rest(2.0);
        let (lhs, unit) = drift_terms(&cs).unwrap();
        assert_eq!(lhs, 1.0);
        // λ₄ = 1, 2^6 = 64, ⟨0⟩^2 = 1
        assert_eq!(unit, 64.0);
        assert!(check_drift_inequality(&cs, 1.0).unwrap().holds);
    }

    #[test]
    fn equal_velocities_with_zero_noise_give_zero_drift() {
        let (psi, sigma) = ones();
        let cs = ConfigSample::new(2, vec![0.0, 0.0, 1.0, 2.0, -1.0, 3.0], vec![1.5, -0.5, 1.5, -0.5, 1.5, -0.5], psi, sigma, vec![0.0, 0.0], 2.0)
            .unwrap();
        assert_eq!(drift_terms(&cs).unwrap().0, 0.0);
        assert_eq!(abs_terms(&cs).unwrap().0, 0.0);
        assert!(check_drift_inequality(&cs, 1.0).unwrap().holds);
    }

    #[test]
    fn abs_exact_two_particle_case() {
        // ⟨±1⟩^4 = 4, ⟨0⟩^4 = 1: every pair contributes |4 − 1| = 3
        let cs = two_at_rest(2.0);
        let (lhs, unit) = abs_terms(&cs).unwrap();
        assert!((lhs - 3.0).abs() < 1e-14);
        assert_eq!(unit, 16.0);
        let (l1, u1) = abs_terms(&two_at_rest(0.5)).unwrap();
        assert!((l1 - (2f64.sqrt() - 1.0)).abs() < 1e-15);
        assert_eq!(u1, 2.0);
    }

    #[test]
    fn exp_inequality_cases() {
        let (psi, _) = ones();
        let zero = ConfigSample::new(1, vec![0.0, 1.0], vec![0.3, -2.0], psi, SigmaKernel::constant(0.0).unwrap(), vec![1.0], 2.0).unwrap();
        let c = check_exp_inequality(&zero, 0.5, 1.0).unwrap();
        assert_eq!(c.lhs, 0.0);
        assert!(c.holds);
        // N = 2 at rest, u₀ = 1, δ = κ = 1: lhs = |e^{√2} − e|, rhs = (1 + e·e)·e
        let cs = two_at_rest(2.0);
        let c = check_exp_inequality(&cs, 1.0, 1.0).unwrap();
        let e = 1f64.exp();
        assert!((c.lhs - (2f64.sqrt().exp() - e)).abs() < 1e-14);
        assert!((c.rhs - (1.0 + e * e) * e).abs() < 1e-12);
        assert!(c.holds);
        let unbounded = ConfigSample::new(1, vec![0.0], vec![0.0], psi, SigmaKernel::bracket_power(1.0, 1.0).unwrap(), vec![1.0], 2.0).unwrap();
        assert!(check_exp_inequality(&unbounded, 1.0, 1.0).is_err());
    }

    #[test]
    fn cancellation_small_cases() {
        let (psi, sigma) = ones();
        let one = ConfigSample::new(2, vec![1.0, 2.0], vec![3.0, -4.0], psi, sigma, vec![1.0, 0.0], 2.0).unwrap();
        assert_eq!(check_cancellation(&one).residual, 0.0);
        let two = ConfigSample::new(1, vec![0.0, 1.0], vec![2.0, -0.5], psi, sigma, vec![1.0], 3.0).unwrap();
        let c = check_cancellation(&two);
        assert_eq!(c.residual, 0.0);
        assert!(c.holds);
    }

    #[test]
    fn young_cases() {
        let (psi, _) = ones();
        let eq = ConfigSample::new(1, vec![0.0, 1.0], vec![2.0, 2.0], psi, SigmaKernel::bracket_power(1.0, 1.5).unwrap(), vec![1.0], 2.0).unwrap();
        let c = check_young(&eq);
        assert!(c.holds);
        assert!((c.lhs - c.rhs).abs() <= 1e-12 * c.rhs);
        let g0 = ConfigSample::new(1, vec![0.0, 1.0], vec![2.0, -1.0], psi, SigmaKernel::constant(1.0).unwrap(), vec![1.0], 2.0).unwrap();
        assert!(check_young(&g0).holds);
    }

    #[test]
    fn range_checks() {
        assert!(drift_terms(&two_at_rest(1.5)).is_err());
        assert!(abs_terms(&two_at_rest(0.25)).is_err());
    }

    #[test]
    fn certification_small_runs() {
        for lemma in Lemma::ALL {
            let gamma = if matches!(lemma, Lemma::Exp) { 0.0 } else { 1.0 };
            let cfg = CertifyConfig::new(lemma, SampleSpec::new(2.0, gamma), 300, 17);
            let a = certify(&cfg, Exec::Parallel).unwrap();
            let b = certify(&cfg, Exec::Sequential).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.violations, 0, "{lemma:?}: {a:?}");
            assert_eq!(a.calibrated_c.is_some(), lemma.needs_calibration());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn explicit_inequalities_hold(seed in any::<u64>(), gamma in 0.0f64..2.0, p in 0.5f64..4.0) {
            let cs = random_sample(&SampleSpec::new(p, gamma), &mut replica_rng(seed, 0)).unwrap();
            prop_assert!(check_cancellation(&cs).holds);
            prop_assert!(check_young(&cs).holds);
            let cs0 = random_sample(&SampleSpec::new(p, 0.0), &mut replica_rng(seed, 1)).unwrap();
            prop_assert!(check_exp_inequality(&cs0, 0.3, 0.7).unwrap().holds);
        }
    }
}
