//! Closed-form envelopes: linear Gronwall, Bihari–LaSalle, moment growth,
//! total-variation stability and the Osgood (log-Lipschitz) bound.
//!
//! Constants that only exist abstractly (the `C` of the moment and stability
//! estimates) are explicit parameters; [`calibrate_constant`] fits them from
//! data.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

fn check_nonneg(name: &str, x: f64) -> Result<()> {
    if x.is_finite() && x >= 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be finite and >= 0, got {x}")))
    }
}

/// `a0·e^{Kt}`.
pub fn gronwall_linear(a0: f64, k: f64, t: f64) -> Result<f64> {
    check_nonneg("a0", a0)?;
    check_nonneg("K", k)?;
    check_nonneg("t", t)?;
    Ok(a0 * (k * t).exp())
}

fn check_lasalle(f0: f64, k: f64, alpha: f64, t: f64) -> Result<()> {
    check_nonneg("f0", f0)?;
    check_nonneg("K", k)?;
    check_nonneg("t", t)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha must lie in (0,1), got {alpha}")));
    }
    Ok(())
}

/// `(f0^α + αKt)^{1/α}`, the solution of `f = f0 + K∫f^{1−α}`.
pub fn bihari_lasalle(f0: f64, k: f64, alpha: f64, t: f64) -> Result<f64> {
    check_lasalle(f0, k, alpha, t)?;
    Ok((f0.powf(alpha) + alpha * k * t).powf(1.0 / alpha))
}

/// Relaxed form `2^{1/α−1} f0 + ((2αK)^{1/α}/2) t^{1/α}` (dominates the primary form).
pub fn bihari_lasalle_relaxed(f0: f64, k: f64, alpha: f64, t: f64) -> Result<f64> {
    check_lasalle(f0, k, alpha, t)?;
    let inv = 1.0 / alpha;
    Ok(2f64.powf(inv - 1.0) * f0 + 0.5 * (2.0 * alpha * k).powf(inv) * t.powf(inv))
}

fn check_moment(p: f64, gamma: f64) -> Result<()> {
    if !(0.0..=2.0).contains(&gamma) {
        return Err(invalid(format!("gamma must lie in [0,2], got {gamma}")));
    }
    if !(p.is_finite() && p >= 2.0) {
        return Err(invalid(format!("p must be >= 2, got {p}")));
    }
    Ok(())
}

/// N-uniform bound of `E (1/N)Σ⟨V_j(t)⟩^{2p}` for the particle system, with
/// `C_p = C·λ_{2p}·2^{5p}`:
/// `2^{4p²/(2−γ)}·init + (C_p(2−γ)/(2p))^{2p/(2−γ)} t^{2p/(2−γ)}` for γ < 2 and
/// `2^{2p}·init·e^{C_p t}` for γ = 2.
pub fn moment_envelope(p: f64, gamma: f64, lambda_2p: f64, c: f64, init_2p: f64, t: f64) -> Result<f64> {
    check_moment(p, gamma)?;
    check_nonneg("lambda_2p", lambda_2p)?;
    check_nonneg("C", c)?;
    check_nonneg("init", init_2p)?;
    check_nonneg("t", t)?;
    let c_p = c * lambda_2p * 2f64.powf(5.0 * p);
    if gamma == 2.0 {
        return Ok(2f64.powf(2.0 * p) * init_2p * (c_p * t).exp());
    }
    let e = 2.0 * p / (2.0 - gamma);
    let head = if init_2p == 0.0 { 0.0 } else { 2f64.powf(4.0 * p * p / (2.0 - gamma)) * init_2p };
    Ok(head + (c_p * (2.0 - gamma) / (2.0 * p)).powf(e) * t.powf(e))
}

/// Bound of `E⟨V(t)⟩^{2p}` for the mean-field process:
/// `C·init + C·t^{2p/(2−γ)}` for γ < 2 and `init·e^{Ct}` for γ = 2.
pub fn meanfield_moment_envelope(p: f64, gamma: f64, c: f64, init_2p: f64, t: f64) -> Result<f64> {
    check_moment(p, gamma)?;
    check_nonneg("C", c)?;
    check_nonneg("init", init_2p)?;
    check_nonneg("t", t)?;
    if gamma == 2.0 {
        return Ok(init_2p * (c * t).exp());
    }
    Ok(c * init_2p + c * t.powf(2.0 * p / (2.0 - gamma)))
}

/// `tv0·exp(4 ψ∞ σ∞ t)`, uncapped.
pub fn tv_envelope_bounded(tv0: f64, psi_max: f64, sigma_max: f64, t: f64) -> Result<f64> {
    if !(0.0..=2.0).contains(&tv0) {
        return Err(invalid(format!("tv0 must lie in [0,2], got {tv0}")));
    }
    check_nonneg("psi_max", psi_max)?;
    check_nonneg("sigma_max", sigma_max)?;
    check_nonneg("t", t)?;
    Ok(tv0 * (4.0 * psi_max * sigma_max * t).exp())
}

fn check_osgood(rho0: f64, c: f64, t: f64) -> Result<()> {
    if !(rho0 > 0.0 && rho0 < 1.0) {
        return Err(invalid(format!("rho0 must lie in (0,1), got {rho0}")));
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(invalid(format!("C must be > 0, got {c}")));
    }
    check_nonneg("t", t)
}

/// `exp(1 − (1 − ln ρ0)e^{−Ct})`, the solution of `ρ' = Cρ(1 − ln ρ)`.
pub fn osgood_closed_form(rho0: f64, c: f64, t: f64) -> Result<f64> {
    check_osgood(rho0, c, t)?;
    Ok((1.0 - (1.0 - rho0.ln()) * (-c * t).exp()).exp())
}

/// Time at which the closed form reaches 1.
pub fn osgood_exit_time(rho0: f64, c: f64) -> Result<f64> {
    check_osgood(rho0, c, 0.0)?;
    Ok((1.0 - rho0.ln()).ln() / c)
}

/// Bound for `ρ(t) ≤ ρ0 + C∫ρ(1 + |ln ρ|)`: the closed form while it stays
/// below 1, then linear growth `e^{2C(t − t₁)}` from the exit time `t₁`.
pub fn osgood_envelope(rho0: f64, c: f64, t: f64) -> Result<f64> {
    let t1 = osgood_exit_time(rho0, c)?;
    if t <= t1 {
        osgood_closed_form(rho0, c, t)
    } else {
        Ok((2.0 * c * (t - t1)).exp())
    }
}

/// `init·e^{Ct}`.
pub fn exp_moment_envelope(init: f64, c: f64, t: f64) -> Result<f64> {
    if !(init.is_finite() && init >= 1.0) {
        return Err(invalid(format!("init must be >= 1, got {init}")));
    }
    check_nonneg("C", c)?;
    check_nonneg("t", t)?;
    Ok(init * (c * t).exp())
}

/// Evaluable envelope with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundEnvelope {
    GronwallLinear { a0: f64, k: f64 },
    BihariLasalle { f0: f64, k: f64, alpha: f64, #[serde(default)] relaxed: bool },
    Moment { p: f64, gamma: f64, lambda_2p: f64, c: f64, init: f64 },
    MeanfieldMoment { p: f64, gamma: f64, c: f64, init: f64 },
    TvBounded { tv0: f64, psi_max: f64, sigma_max: f64, #[serde(default)] cap: Option<f64> },
    Osgood { rho0: f64, c: f64 },
    ExpMoment { init: f64, c: f64 },
}

impl BoundEnvelope {
    pub fn name(&self) -> &'static str {
        match self {
            BoundEnvelope::GronwallLinear { .. } => "gronwall_linear",
            BoundEnvelope::BihariLasalle { .. } => "bihari_lasalle",
            BoundEnvelope::Moment { .. } => "moment",
            BoundEnvelope::MeanfieldMoment { .. } => "meanfield_moment",
            BoundEnvelope::TvBounded { .. } => "tv_bounded",
            BoundEnvelope::Osgood { .. } => "osgood",
            BoundEnvelope::ExpMoment { .. } => "exp_moment",
        }
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        match *self {
            BoundEnvelope::GronwallLinear { a0, k } => gronwall_linear(a0, k, t),
            BoundEnvelope::BihariLasalle { f0, k, alpha, relaxed } => {
                if relaxed {
                    bihari_lasalle_relaxed(f0, k, alpha, t)
                } else {
                    bihari_lasalle(f0, k, alpha, t)
                }
            }
            BoundEnvelope::Moment { p, gamma, lambda_2p, c, init } => moment_envelope(p, gamma, lambda_2p, c, init, t),
            BoundEnvelope::MeanfieldMoment { p, gamma, c, init } => meanfield_moment_envelope(p, gamma, c, init, t),
            BoundEnvelope::TvBounded { tv0, psi_max, sigma_max, cap } => {
                let b = tv_envelope_bounded(tv0, psi_max, sigma_max, t)?;
                Ok(cap.map_or(b, |c| b.min(c)))
            }
            BoundEnvelope::Osgood { rho0, c } => osgood_envelope(rho0, c, t),
            BoundEnvelope::ExpMoment { init, c } => exp_moment_envelope(init, c, t),
        }
    }

    /// `(t, bound(t))` pairs.
    pub fn curve(&self, times: &[f64]) -> Result<Vec<(f64, f64)>> {
        times.iter().map(|&t| Ok((t, self.eval(t)?))).collect()
    }
}

/// Smallest `C ∈ [0, c_max]` with `measured[i] ≤ bound(C, i)` for every `i`,
/// found by bisection; `bound` must be nondecreasing in `C`. Returns `None` if
/// even `c_max` does not suffice.
pub fn calibrate_constant<F>(measured: &[f64], c_max: f64, bound: F) -> Result<Option<f64>>
where
    F: Fn(f64, usize) -> Result<f64>,
{
    let ok = |c: f64| -> Result<bool> {
        for (i, m) in measured.iter().enumerate() {
            if *m > bound(c, i)? {
                return Ok(false);
            }
        }
        Ok(true)
    };
    if ok(0.0)? {
        return Ok(Some(0.0));
    }
    if !ok(c_max)? {
        return Ok(None);
    }
    let (mut lo, mut hi) = (0.0, c_max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ok(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    Ok(Some(hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad;
    use proptest::prelude::*;

    #[test]
    fn gronwall_examples() {
        assert_eq!(gronwall_linear(1.0, 0.0, 3.0).unwrap(), 1.0);
        assert_eq!(gronwall_linear(0.0, 2.0, 3.0).unwrap(), 0.0);
        assert!((gronwall_linear(2.0, 1.0, 1.0).unwrap() - 5.43656).abs() < 1e-5);
        assert!(gronwall_linear(-1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn lasalle_examples() {
        assert_eq!(bihari_lasalle(0.0, 1.0, 0.5, 2.0).unwrap(), 1.0);
        assert_eq!(bihari_lasalle(3.0, 0.0, 0.3, 5.0).unwrap(), 3.0f64.powf(0.3).powf(1.0 / 0.3));
        assert_eq!(bihari_lasalle(1.0, 1.0, 0.5, 0.0).unwrap(), 1.0);
        assert!(bihari_lasalle(1.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn lasalle_solves_its_integral_equation() {
        for &(f0, k, alpha) in &[(1.0, 1.0, 0.5), (0.3, 2.0, 0.25), (4.0, 0.7, 0.8), (0.0, 1.5, 0.5)] {
            for &t in &[0.5, 1.0, 3.0] {
                let f = |s: f64| bihari_lasalle(f0, k, alpha, s).unwrap();
                let rhs = f0 + k * quad::integrate(|s| f(s).powf(1.0 - alpha), 0.0, t, 1e-13, 1e-14);
                assert!((f(t) - rhs).abs() <= 1e-8 * f(t).max(1.0), "{f0} {k} {alpha} {t}");
            }
        }
    }

    #[test]
    fn moment_examples() {
        for p in [2.0, 3.0] {
            let b = moment_envelope(p, 2.0, 1.0, 0.4, 3.0, 0.0).unwrap();
            assert_eq!(b, 2f64.powf(2.0 * p) * 3.0);
        }
        let flat = moment_envelope(2.0, 2.0, 0.0, 0.4, 3.0, 10.0).unwrap();
        assert_eq!(flat, 16.0 * 3.0);
        assert!(moment_envelope(2.0, 2.5, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(moment_envelope(2.0, -0.1, 1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn moment_growth_exponent_gamma_zero() {
        // γ = 0, p = 2: t² growth, so bound(2t)/bound(t) → 4
        let b = |t: f64| moment_envelope(2.0, 0.0, 1.0, 1e-3, 2.0, t).unwrap();
        let r = |t: f64| b(2.0 * t) / b(t);
        assert!((r(1e8) - 4.0).abs() < 1e-6);
        assert!((r(1e4) - 4.0).abs() < (r(1e2) - 4.0).abs());
        // the growth term on its own is exactly quadratic
        let g = |t: f64| b(t) - b(0.0);
        assert!((g(6.0) / g(3.0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn meanfield_moment_branches() {
        assert_eq!(meanfield_moment_envelope(2.0, 0.0, 3.0, 2.0, 0.0).unwrap(), 6.0);
        assert!((meanfield_moment_envelope(2.0, 0.0, 3.0, 2.0, 2.0).unwrap() - (6.0 + 3.0 * 4.0)).abs() < 1e-12);
        assert!((meanfield_moment_envelope(2.0, 2.0, 1.0, 2.0, 1.0).unwrap() - 2.0 * 1f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_envelope_bounded(0.0, 1.0, 1.0, 7.0).unwrap(), 0.0);
        assert!((tv_envelope_bounded(0.1, 1.0, 1.0, 1.0).unwrap() - 5.45982).abs() < 1e-5);
        assert_eq!(tv_envelope_bounded(0.3, 2.0, 5.0, 0.0).unwrap(), 0.3);
        assert!(tv_envelope_bounded(2.5, 1.0, 1.0, 0.0).is_err());
        let capped = BoundEnvelope::TvBounded { tv0: 0.1, psi_max: 1.0, sigma_max: 1.0, cap: Some(2.0) };
        assert_eq!(capped.eval(1.0).unwrap(), 2.0);
    }

    #[test]
    fn exp_moment_examples() {
        assert_eq!(exp_moment_envelope(3.0, 0.0, 9.0).unwrap(), 3.0);
        assert!((exp_moment_envelope(1.0, 1.0, 1.0).unwrap() - 1f64.exp()).abs() < 1e-15);
        let g1 = exp_moment_envelope(1.0, 0.7, 1.3).unwrap();
        let g2 = exp_moment_envelope(1.0, 0.7, 2.6).unwrap();
        assert!((g2 - g1 * g1).abs() < 1e-12 * g2);
        assert!(exp_moment_envelope(0.5, 1.0, 1.0).is_err());
    }

    /// Classical RK4 for ρ' = Cρ(1 − ln ρ).
    fn osgood_rk4(rho0: f64, c: f64, t: f64, steps: usize) -> f64 {
        let f = |x: f64| c * x * (1.0 - x.ln());
        let h = t / steps as f64;
        let mut x = rho0;
        for _ in 0..steps {
            let k1 = f(x);
            let k2 = f(x + 0.5 * h * k1);
            let k3 = f(x + 0.5 * h * k2);
            let k4 = f(x + h * k3);
            x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        x
    }

    #[test]
    fn osgood_examples() {
        for rho0 in [0.01, 0.3, 0.9] {
            assert!((osgood_closed_form(rho0, 2.0, 0.0).unwrap() - rho0).abs() < 1e-15);
        }
        let tiny = osgood_closed_form(1e-300, 1.0, 1.0).unwrap();
        assert!(tiny < 1e-100);
        let e1 = osgood_closed_form((-1.0f64).exp(), 1.0, 1.0).unwrap();
        assert!((e1 - (1.0 - 2.0 * (-1.0f64).exp()).exp()).abs() < 1e-15);
        assert!((e1 - osgood_rk4((-1.0f64).exp(), 1.0, 1.0, 2000)).abs() < 1e-6);
        assert!(osgood_closed_form(1.0, 1.0, 1.0).is_err());
        assert!(osgood_closed_form(0.5, 0.0, 1.0).is_err());
    }

    #[test]
    fn osgood_matches_numeric_ode_on_grid() {
        for rho0 in [1e-6, 1e-3, 0.05, 0.2, (-1.0f64).exp(), 0.7, 0.95] {
            for c in [0.1, 0.5, 1.0, 2.0] {
                for k in 0..=20 {
                    let t = 5.0 * k as f64 / 20.0;
                    let exact = osgood_closed_form(rho0, c, t).unwrap();
                    let num = osgood_rk4(rho0, c, t, 4000);
                    assert!((exact - num).abs() <= 1e-6 * exact.max(1.0), "{rho0} {c} {t}: {exact} vs {num}");
                }
            }
        }
    }

    #[test]
    fn osgood_envelope_switches_at_one() {
        let (rho0, c) = (0.2, 1.0);
        let t1 = osgood_exit_time(rho0, c).unwrap();
        assert!((osgood_closed_form(rho0, c, t1).unwrap() - 1.0).abs() < 1e-12);
        assert!((osgood_envelope(rho0, c, t1 + 0.5).unwrap() - 1f64.exp()).abs() < 1e-12);
        assert!(osgood_envelope(rho0, c, t1 - 1e-3).unwrap() < 1.0);
    }

    #[test]
    fn calibration_finds_minimal_constant() {
        let measured = [1.0, 2.0, 4.5];
        let times = [1.0, 2.0, 3.0];
        let c = calibrate_constant(&measured, 100.0, |c, i| Ok(c * times[i])).unwrap().unwrap();
        assert!((c - 1.5).abs() < 1e-9);
        assert_eq!(calibrate_constant(&measured, 1.0, |c, i| Ok(c * times[i])).unwrap(), None);
        assert_eq!(calibrate_constant(&[0.0], 1.0, |c, _| Ok(c)).unwrap(), Some(0.0));
    }

    #[test]
    fn envelope_dispatch_matches_free_functions() {
        let e = BoundEnvelope::Osgood { rho0: 0.1, c: 2.0 };
        assert_eq!(e.name(), "osgood");
        assert_eq!(e.eval(0.3).unwrap(), osgood_envelope(0.1, 2.0, 0.3).unwrap());
        let curve = BoundEnvelope::ExpMoment { init: 2.0, c: 1.0 }.curve(&[0.0, 1.0]).unwrap();
        assert_eq!(curve[0], (0.0, 2.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn envelopes_monotone(a in 0.0f64..5.0, da in 0.0f64..2.0, k in 0.0f64..3.0, alpha in 0.05f64..0.95,
                              t in 0.0f64..4.0, dt in 0.0f64..2.0, gamma in 0.0f64..1.9, two in proptest::bool::ANY,
                              rho in 0.001f64..0.99, c in 0.01f64..3.0) {
            let gamma = if two { 2.0 } else { gamma };
            let fams: Vec<Box<dyn Fn(f64, f64) -> f64>> = vec![
                Box::new(|a, t| gronwall_linear(a, k, t).unwrap()),
                Box::new(|a, t| bihari_lasalle(a, k, alpha, t).unwrap()),
                Box::new(|a, t| bihari_lasalle_relaxed(a, k, alpha, t).unwrap()),
                Box::new(|a, t| moment_envelope(2.0, gamma, 1.0, k, a, t).unwrap()),
                Box::new(|a, t| meanfield_moment_envelope(2.0, gamma, k, a, t).unwrap()),
                Box::new(|a, t| tv_envelope_bounded(a.min(2.0) / 2.5, 1.0, k, t).unwrap()),
                Box::new(|a, t| exp_moment_envelope(1.0 + a, k, t).unwrap()),
            ];
            for f in &fams {
                let b = f(a, t);
                prop_assert!(f(a, t + dt) >= b * (1.0 - 1e-12));
                prop_assert!(f(a + da, t) >= b * (1.0 - 1e-12));
            }
            let o = osgood_envelope(rho, c, t).unwrap();
            prop_assert!(osgood_envelope(rho, c, t + dt).unwrap() >= o * (1.0 - 1e-12));
            prop_assert!(osgood_envelope((rho + 0.001).min(0.999), c, t).unwrap() >= o * (1.0 - 1e-12));
            prop_assert!(osgood_envelope(rho, c, 0.0).unwrap() >= rho * (1.0 - 1e-15));
        }

        #[test]
        fn lasalle_primary_below_relaxed(f0 in 0.0f64..10.0, k in 0.0f64..5.0, alpha in 0.01f64..0.99, t in 0.0f64..10.0) {
            let p = bihari_lasalle(f0, k, alpha, t).unwrap();
            let r = bihari_lasalle_relaxed(f0, k, alpha, t).unwrap();
            prop_assert!(p <= r * (1.0 + 1e-12) + 1e-300);
        }
    }
}
