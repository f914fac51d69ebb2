//! Exact simulation of the N-particle jump process by thinning.
//!
//! Between events every particle moves by free transport. Pair proposals
//! `(k, j)` arrive at the constant rate [`majorant_rate`] and are accepted
//! with probability `ψ(r_k − r_j) σ(v_k − v_j) g_m(v) / (ψ_max σ_bound)`; an
//! accepted proposal sets `v_k ← v_j + u` with `u ~ a`. Since the majorant is
//! global, rejected proposals need no clock redraw and trajectories carry no
//! time-discretisation error.
//!
//! For σ with growth exponent γ > 0 the rates are multiplied by the smooth
//! cutoff `g_m(v) = g(Σ_k |v_k|² / m²)` with `1_{[0,1]} ≤ g ≤ 1_{[0,2]}`, so
//! the simulated generator is the truncated one. Once `Σ_k |v_k|² ≥ 2m²` all
//! rates vanish for good and the run finishes by pure transport.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exec::Exec;
use crate::init::ProductLaw;
use crate::kernels::{bracket, KernelSet};
use crate::rng::{replica_rng, rng_from_seed, SimRng};
use crate::state::ParticleState;

/// Run parameters of one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub t_end: f64,
    pub output_times: Vec<f64>,
    pub seed: u64,
    /// The `m` of the cutoff `g_m`; mandatory when γ > 0.
    pub truncation_m: Option<f64>,
    pub record_jump_log: bool,
    /// Drop the `k = j` proposals (the generator's double sum includes them).
    pub exclude_diagonal: bool,
}

impl SimConfig {
    pub fn new(t_end: f64, output_times: Vec<f64>, seed: u64) -> Self {
        SimConfig { t_end, output_times, seed, truncation_m: None, record_jump_log: false, exclude_diagonal: false }
    }

    /// `count + 1` equally spaced output times on `[0, t_end]`.
    pub fn uniform_grid(t_end: f64, count: usize) -> Vec<f64> {
        (0..=count).map(|i| t_end * i as f64 / count as f64).collect()
    }

    pub fn with_truncation(mut self, m: f64) -> Self {
        self.truncation_m = Some(m);
        self
    }

    pub fn with_jump_log(mut self) -> Self {
        self.record_jump_log = true;
        self
    }

    /// Checks the time horizon and output grid only.
    pub fn validate_times(&self) -> Result<()> {
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(invalid(format!("t_end must be finite and >= 0, got {}", self.t_end)));
        }
        if self.output_times.windows(2).any(|w| w[0] > w[1]) {
            return Err(invalid("output_times must be sorted"));
        }
        if self.output_times.iter().any(|t| !(0.0..=self.t_end).contains(t)) {
            return Err(invalid("output_times must lie in [0, t_end]"));
        }
        Ok(())
    }

    pub fn validate(&self, ks: &KernelSet) -> Result<()> {
        self.validate_times()?;
        if let Some(m) = self.truncation_m {
            if !(m.is_finite() && m > 0.0) {
                return Err(invalid(format!("truncation_m must be > 0, got {m}")));
            }
        } else if ks.sigma.gamma() > 0.0 {
            return Err(Error::MissingTruncation { gamma: ks.sigma.gamma() });
        }
        Ok(())
    }
}

/// One thinning proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    pub t: f64,
    /// Zero-based index of the particle whose velocity changes.
    pub k: usize,
    /// Zero-based index of the partner particle.
    pub j: usize,
    pub u: Vec<f64>,
    pub accepted: bool,
    pub rate_ratio: f64,
}

/// Snapshots at the requested output times plus the optional proposal log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<ParticleState>,
    pub jump_log: Vec<JumpEvent>,
    /// Set when the cutoff `g_m` switched every rate off.
    pub truncation_frozen: bool,
    pub proposals: u64,
    pub accepted: u64,
}

impl Trajectory {
    pub fn final_state(&self) -> Option<&ParticleState> {
        self.states.last()
    }
}

/// Smooth cutoff with `g = 1` on `[0, 1]`, `g = 0` on `[2, ∞)`.
pub fn cutoff(x: f64) -> f64 {
    if x <= 1.0 {
        1.0
    } else if x >= 2.0 {
        0.0
    } else {
        let h = |y: f64| (-1.0 / y).exp();
        let a = h(2.0 - x);
        a / (a + h(x - 1.0))
    }
}

/// `g_m(v)` from the total kinetic sum `Σ_k |v_k|²`.
pub fn truncation_factor(m: f64, kinetic_sum: f64) -> f64 {
    cutoff(kinetic_sum / (m * m))
}

/// Bound on σ valid on the support of `g_m` (where `|v_k − v_j| ≤ 2√2 m`).
pub fn sigma_bound(ks: &KernelSet, truncation_m: Option<f64>) -> Result<f64> {
    let gamma = ks.sigma.gamma();
    if gamma == 0.0 {
        return Ok(ks.sigma.c_sigma());
    }
    let m = truncation_m.ok_or(Error::MissingTruncation { gamma })?;
    Ok(ks.sigma.c_sigma() * (1.0 + 8.0 * m * m).powf(0.5 * gamma))
}

/// Constant majorant `Λ̄ = N ψ_max σ_bound` of the total jump intensity
/// `(1/N) Σ_{k,j} ψ σ g_m`.
pub fn majorant_rate(ks: &KernelSet, state: &ParticleState, truncation_m: Option<f64>) -> Result<f64> {
    Ok(state.n as f64 * ks.psi.sup() * sigma_bound(ks, truncation_m)?)
}

/// `v_k ← v_j + u`; everything else unchanged.
pub fn apply_jump(state: &mut ParticleState, k: usize, j: usize, u: &[f64]) {
    let d = state.d;
    state.velocities.copy_within(j * d..(j + 1) * d, k * d);
    for (x, ua) in state.velocities[k * d..(k + 1) * d].iter_mut().zip(u) {
        *x += ua;
    }
}

/// Result of [`JumpSimulator::step_to_next_event`].
#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Event(JumpEvent),
    /// No further jump can occur; the flag tells whether the cutoff caused it.
    Quiescent { frozen: bool },
}

/// Thinning event loop for one run. Kernels and config are borrowed read-only.
pub struct JumpSimulator<'a> {
    ks: &'a KernelSet,
    truncation_m: Option<f64>,
    exclude_diagonal: bool,
    /// ψ_max σ_bound.
    pair_bound: f64,
    rate: f64,
    clock: Option<Exp<f64>>,
    kinetic_sum: f64,
    u: Vec<f64>,
}

impl<'a> JumpSimulator<'a> {
    pub fn new(ks: &'a KernelSet, state: &ParticleState, truncation_m: Option<f64>, exclude_diagonal: bool) -> Result<Self> {
        if state.d != ks.dim() {
            return Err(Error::DimensionMismatch { expected: ks.dim(), got: state.d });
        }
        let pair_bound = ks.psi.sup() * sigma_bound(ks, truncation_m)?;
        let n = state.n as f64;
        let pairs = if exclude_diagonal { n * (n - 1.0) } else { n * n };
        let rate = pairs / n * pair_bound;
        let clock = if rate > 0.0 { Some(Exp::new(rate).map_err(|e| invalid(e.to_string()))?) } else { None };
        Ok(JumpSimulator {
            ks,
            truncation_m,
            exclude_diagonal,
            pair_bound,
            rate,
            clock,
            kinetic_sum: state.kinetic_sum(),
            u: vec![0.0; state.d],
        })
    }

    /// Total proposal rate Λ̄.
    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// True once the state can no longer jump.
    pub fn is_quiescent(&self) -> bool {
        self.clock.is_none() || self.is_frozen()
    }

    pub fn is_frozen(&self) -> bool {
        match self.truncation_m {
            Some(m) => self.kinetic_sum >= 2.0 * m * m,
            None => false,
        }
    }

    /// Exponential waiting time until the next proposal.
    pub fn draw_waiting_time<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.clock {
            Some(c) => c.sample(rng),
            None => f64::INFINITY,
        }
    }

    /// Resolve a proposal at the state's current time (already transported).
    pub fn resolve<R: Rng + ?Sized>(&mut self, state: &mut ParticleState, rng: &mut R) -> Result<JumpEvent> {
        let n = state.n;
        let k = rng.random_range(0..n);
        let j = if self.exclude_diagonal {
            let j = rng.random_range(0..n - 1);
            if j >= k {
                j + 1
            } else {
                j
            }
        } else {
            rng.random_range(0..n)
        };
        self.ks.noise.sample_into(rng, &mut self.u);
        let g = match self.truncation_m {
            Some(m) => truncation_factor(m, self.kinetic_sum),
            None => 1.0,
        };
        let ratio = self.ks.pair_rate(state.r(k), state.v(k), state.r(j), state.v(j)) * g / self.pair_bound;
        if !(0.0..=1.0 + 1e-12).contains(&ratio) {
            return Err(Error::MajorantViolated { ratio });
        }
        let accepted = rng.random::<f64>() < ratio;
        if accepted {
            apply_jump(state, k, j, &self.u);
            if state.v(k).iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { t: state.t });
            }
            if self.truncation_m.is_some() {
                self.kinetic_sum = state.kinetic_sum();
            }
        }
        Ok(JumpEvent { t: state.t, k, j, u: self.u.clone(), accepted, rate_ratio: ratio })
    }

    /// Advance to the next proposal (transporting positions) and resolve it.
    pub fn step_to_next_event<R: Rng + ?Sized>(&mut self, state: &mut ParticleState, rng: &mut R) -> Result<StepOutcome> {
        if self.is_quiescent() {
            return Ok(StepOutcome::Quiescent { frozen: self.is_frozen() });
        }
        let dt = self.draw_waiting_time(rng);
        state.transport_to(state.t + dt);
        Ok(StepOutcome::Event(self.resolve(state, rng)?))
    }
}

/// Simulate with the generator seeded from `cfg.seed`.
pub fn simulate(ks: &KernelSet, state0: &ParticleState, cfg: &SimConfig) -> Result<Trajectory> {
    simulate_with_rng(ks, state0, cfg, &mut rng_from_seed(cfg.seed))
}

/// Simulate from `state0` to `cfg.t_end`, drawing from `rng`.
pub fn simulate_with_rng(ks: &KernelSet, state0: &ParticleState, cfg: &SimConfig, rng: &mut SimRng) -> Result<Trajectory> {
    cfg.validate(ks)?;
    if !state0.is_finite() {
        return Err(Error::NonFinite { t: state0.t });
    }
    if cfg.output_times.first().is_some_and(|t| *t < state0.t) {
        return Err(invalid("output times precede the initial state"));
    }
    let mut sim = JumpSimulator::new(ks, state0, cfg.truncation_m, cfg.exclude_diagonal)?;
    let mut state = state0.clone();
    let mut traj = Trajectory {
        states: Vec::with_capacity(cfg.output_times.len()),
        jump_log: Vec::new(),
        truncation_frozen: sim.is_frozen(),
        proposals: 0,
        accepted: 0,
    };
    let mut next_out = 0;
    loop {
        let next_event = if sim.is_quiescent() { f64::INFINITY } else { state.t + sim.draw_waiting_time(rng) };
        while next_out < cfg.output_times.len() && cfg.output_times[next_out] < next_event {
            let snap = state.transported(cfg.output_times[next_out]);
            if !snap.is_finite() {
                return Err(Error::NonFinite { t: snap.t });
            }
            traj.states.push(snap);
            next_out += 1;
        }
        if next_event > cfg.t_end {
            break;
        }
        state.transport_to(next_event);
        let ev = sim.resolve(&mut state, rng)?;
        traj.proposals += 1;
        if ev.accepted {
            traj.accepted += 1;
            if sim.is_frozen() {
                traj.truncation_frozen = true;
            }
        }
        if cfg.record_jump_log {
            traj.jump_log.push(ev);
        }
    }
    Ok(traj)
}

/// Scalar functional of a particle configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observable {
    /// (1/N) Σ |v_k|².
    VelocitySquare,
    /// (1/N) Σ ⟨v_k⟩^q.
    BracketMoment { q: f64 },
    /// (1/N) Σ exp(δ ⟨v_k⟩^κ).
    ExpMoment { delta: f64, kappa: f64 },
    /// Component `axis` of the mean velocity.
    MeanVelocity { axis: usize },
    /// Component `axis` of the centre of mass.
    MeanPosition { axis: usize },
}

impl Observable {
    pub fn name(&self) -> String {
        match self {
            Observable::VelocitySquare => "velocity_square".into(),
            Observable::BracketMoment { q } => format!("bracket_moment_{q}"),
            Observable::ExpMoment { delta, kappa } => format!("exp_moment_{delta}_{kappa}"),
            Observable::MeanVelocity { axis } => format!("mean_velocity_{axis}"),
            Observable::MeanPosition { axis } => format!("mean_position_{axis}"),
        }
    }

    pub fn eval(&self, s: &ParticleState) -> f64 {
        let n = s.n as f64;
        match *self {
            Observable::VelocitySquare => s.kinetic_sum() / n,
            Observable::BracketMoment { q } => (0..s.n).map(|k| bracket(s.v(k)).powf(q)).sum::<f64>() / n,
            Observable::ExpMoment { delta, kappa } => {
                (0..s.n).map(|k| (delta * bracket(s.v(k)).powf(kappa)).exp()).sum::<f64>() / n
            }
            Observable::MeanVelocity { axis } => (0..s.n).map(|k| s.v(k)[axis]).sum::<f64>() / n,
            Observable::MeanPosition { axis } => (0..s.n).map(|k| s.r(k)[axis]).sum::<f64>() / n,
        }
    }
}

/// Per-time mean and variance of each observable over the replicas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub times: Vec<f64>,
    pub observables: Vec<Observable>,
    pub replicas: usize,
    /// `mean[o][t]`.
    pub mean: Vec<Vec<f64>>,
    /// Unbiased sample variance, `variance[o][t]` (0 for a single replica).
    pub variance: Vec<Vec<f64>>,
    pub frozen_replicas: usize,
}

impl EnsembleSummary {
    pub fn std_error(&self, obs: usize, time: usize) -> f64 {
        (self.variance[obs][time] / self.replicas as f64).sqrt()
    }
}

/// Run `replicas` independent copies from i.i.d. draws of `law` and map each
/// trajectory through `f`. Replica `i` uses `replica_seed(cfg.seed, i)` for
/// both its initial state and its event stream.
pub fn map_replicas<T, F>(
    ks: &KernelSet,
    law: &ProductLaw,
    n: usize,
    replicas: usize,
    cfg: &SimConfig,
    exec: Exec,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &ParticleState, Trajectory) -> T + Sync + Send,
{
    if replicas == 0 || n == 0 {
        return Err(invalid("need at least one replica and one particle"));
    }
    if law.dim() != ks.dim() {
        return Err(Error::DimensionMismatch { expected: ks.dim(), got: law.dim() });
    }
    cfg.validate(ks)?;
    exec.try_map(replicas, |i| {
        let mut rng = replica_rng(cfg.seed, i as u64);
        let state0 = law.sample_state(n, &mut rng);
        let traj = simulate_with_rng(ks, &state0, cfg, &mut rng)?;
        Ok(f(i, &state0, traj))
    })
}

/// Ensemble statistics of `observables` at `cfg.output_times`.
pub fn ensemble(
    ks: &KernelSet,
    law: &ProductLaw,
    n: usize,
    replicas: usize,
    cfg: &SimConfig,
    observables: &[Observable],
    exec: Exec,
) -> Result<EnsembleSummary> {
    for o in observables {
        if let Observable::MeanVelocity { axis } | Observable::MeanPosition { axis } = o {
            if *axis >= ks.dim() {
                return Err(invalid(format!("observable axis {axis} out of range")));
            }
        }
    }
    let per_replica = map_replicas(ks, law, n, replicas, cfg, exec, |_, _, traj| {
        let values: Vec<Vec<f64>> =
            observables.iter().map(|o| traj.states.iter().map(|s| o.eval(s)).collect()).collect();
        (values, traj.truncation_frozen)
    })?;
    let nt = cfg.output_times.len();
    let no = observables.len();
    let mut mean = vec![vec![0.0; nt]; no];
    let mut m2 = vec![vec![0.0; nt]; no];
    let mut frozen = 0;
    // Welford, in replica order.
    for (count, (values, fr)) in per_replica.iter().enumerate() {
        frozen += usize::from(*fr);
        let c = (count + 1) as f64;
        for o in 0..no {
            for t in 0..nt {
                let x = values[o][t];
                let delta = x - mean[o][t];
                mean[o][t] += delta / c;
                m2[o][t] += delta * (x - mean[o][t]);
            }
        }
    }
    let variance = m2
        .into_iter()
        .map(|row| row.into_iter().map(|s| if replicas > 1 { s / (replicas - 1) as f64 } else { 0.0 }).collect())
        .collect();
    Ok(EnsembleSummary {
        times: cfg.output_times.clone(),
        observables: observables.to_vec(),
        replicas,
        mean,
        variance,
        frozen_replicas: frozen,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{NoiseDensity, PsiKernel, SigmaKernel};

    fn kernels(psi: PsiKernel, sigma: SigmaKernel, noise: NoiseDensity) -> KernelSet {
        KernelSet::new(psi, sigma, noise).unwrap()
    }

    fn ones(d: usize) -> KernelSet {
        kernels(PsiKernel::constant(1.0).unwrap(), SigmaKernel::constant(1.0).unwrap(), NoiseDensity::standard_gaussian(d))
    }

    #[test]
    fn majorant_examples() {
        let s2 = ParticleState::new(0.0, 1, vec![0.0; 2], vec![0.0; 2]).unwrap();
        assert_eq!(majorant_rate(&ones(1), &s2, None).unwrap(), 2.0);
        let s10 = ParticleState::new(0.0, 1, vec![0.0; 10], vec![0.0; 10]).unwrap();
        let ks = kernels(PsiKernel::constant(0.5).unwrap(), SigmaKernel::constant(2.0).unwrap(), NoiseDensity::degenerate_zero(1));
        assert_eq!(majorant_rate(&ks, &s10, None).unwrap(), 10.0);
        let ks = kernels(PsiKernel::constant(1.0).unwrap(), SigmaKernel::bracket_power(1.0, 2.0).unwrap(), NoiseDensity::degenerate_zero(1));
        assert_eq!(majorant_rate(&ks, &s2, Some(1.0)).unwrap(), 18.0);
        assert!(matches!(majorant_rate(&ks, &s2, None), Err(Error::MissingTruncation { .. })));
    }

    #[test]
    fn apply_jump_examples() {
        let mut s = ParticleState::new(0.0, 1, vec![0.0, 0.0], vec![1.0, 3.0]).unwrap();
        apply_jump(&mut s, 0, 1, &[0.5]);
        assert_eq!(s.velocities, vec![3.5, 3.0]);
        let before = s.clone();
        apply_jump(&mut s, 0, 0, &[0.0]);
        assert_eq!(s, before);
        let mut s = ParticleState::new(0.0, 2, vec![0.0; 4], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        apply_jump(&mut s, 0, 1, &[-1.0, -1.0]);
        assert_eq!(s.v(0), &[0.0, 0.0]);
        assert_eq!(s.r(0), &[0.0, 0.0]);
    }

    #[test]
    fn cutoff_shape() {
        assert_eq!(cutoff(0.0), 1.0);
        assert_eq!(cutoff(1.0), 1.0);
        assert_eq!(cutoff(2.0), 0.0);
        assert!((cutoff(1.5) - 0.5).abs() < 1e-15);
        let mut prev = 1.0;
        for i in 0..=1000 {
            let g = cutoff(1.0 + i as f64 / 1000.0);
            assert!(g <= prev && (0.0..=1.0).contains(&g));
            prev = g;
        }
    }

    #[test]
    fn zero_rate_is_free_transport() {
        let ks = kernels(PsiKernel::constant(1.0).unwrap(), SigmaKernel::constant(0.0).unwrap(), NoiseDensity::standard_gaussian(1));
        let s0 = ParticleState::new(0.0, 1, vec![0.0], vec![1.0]).unwrap();
        let traj = simulate(&ks, &s0, &SimConfig::new(2.0, vec![2.0], 1)).unwrap();
        assert_eq!(traj.states[0].positions, vec![2.0]);
        assert_eq!(traj.states[0].velocities, vec![1.0]);
        assert_eq!(traj.proposals, 0);
    }

    #[test]
    fn degenerate_noise_reaches_consensus() {
        let ks = kernels(PsiKernel::constant(1.0).unwrap(), SigmaKernel::constant(1.0).unwrap(), NoiseDensity::degenerate_zero(1));
        let s0 = ParticleState::new(0.0, 1, vec![0.0, 1.0], vec![-1.0, 2.0]).unwrap();
        let cfg = SimConfig::new(20.0, SimConfig::uniform_grid(20.0, 40), 11).with_jump_log();
        let traj = simulate(&ks, &s0, &cfg).unwrap();
        let first = traj.jump_log.iter().find(|e| e.accepted && e.k != e.j).expect("an off-diagonal jump");
        for s in traj.states.iter().filter(|s| s.t > first.t) {
            assert_eq!(s.v(0), s.v(1));
        }
    }

    #[test]
    fn exclude_diagonal_never_proposes_self_pairs() {
        let mut cfg = SimConfig::new(5.0, vec![5.0], 3).with_jump_log();
        cfg.exclude_diagonal = true;
        let s0 = ParticleState::new(0.0, 1, vec![0.0; 3], vec![0.0, 1.0, 2.0]).unwrap();
        let traj = simulate(&ones(1), &s0, &cfg).unwrap();
        assert!(!traj.jump_log.is_empty());
        assert!(traj.jump_log.iter().all(|e| e.k != e.j));
        let single = ParticleState::new(0.0, 1, vec![0.0], vec![1.0]).unwrap();
        let traj = simulate(&ones(1), &single, &cfg).unwrap();
        assert_eq!(traj.proposals, 0);
    }

    #[test]
    fn truncation_freezes_outside_support() {
        let ks = kernels(PsiKernel::constant(1.0).unwrap(), SigmaKernel::bracket_power(1.0, 1.0).unwrap(), NoiseDensity::standard_gaussian(1));
        let s0 = ParticleState::new(0.0, 1, vec![0.0, 0.0], vec![3.0, -3.0]).unwrap();
        let cfg = SimConfig::new(1.0, vec![1.0], 5).with_truncation(1.0);
        let traj = simulate(&ks, &s0, &cfg).unwrap();
        assert!(traj.truncation_frozen);
        assert_eq!(traj.proposals, 0);
        assert_eq!(traj.states[0].positions, vec![3.0, -3.0]);
    }

    #[test]
    fn missing_truncation_rejected() {
        let ks = kernels(PsiKernel::constant(1.0).unwrap(), SigmaKernel::bracket_power(1.0, 1.0).unwrap(), NoiseDensity::standard_gaussian(1));
        let s0 = ParticleState::new(0.0, 1, vec![0.0], vec![0.0]).unwrap();
        assert!(simulate(&ks, &s0, &SimConfig::new(1.0, vec![1.0], 5)).is_err());
    }

    #[test]
    fn acceptance_ratios_within_unit_interval() {
        let ks = kernels(PsiKernel::rational(2.0, 1.0).unwrap(), SigmaKernel::bracket_power(0.7, 2.0).unwrap(), NoiseDensity::standard_gaussian(2));
        let law = ProductLaw::new(
            crate::init::AxisLaw::Gaussian { mean: vec![0.0; 2], std: vec![1.0; 2] },
            crate::init::AxisLaw::Gaussian { mean: vec![0.0; 2], std: vec![0.5; 2] },
        )
        .unwrap();
        let cfg = SimConfig::new(1.0, vec![1.0], 9).with_truncation(4.0).with_jump_log();
        let logs = map_replicas(&ks, &law, 6, 20, &cfg, Exec::Parallel, |_, _, t| t.jump_log).unwrap();
        let events: Vec<&JumpEvent> = logs.iter().flatten().collect();
        assert!(events.len() > 1000);
        assert!(events.iter().all(|e| (0.0..=1.0).contains(&e.rate_ratio)));
    }

    #[test]
    fn deterministic_given_seed() {
        let s0 = ParticleState::new(0.0, 2, vec![0.0, 1.0, 2.0, 3.0], vec![1.0, 0.0, -1.0, 0.5]).unwrap();
        let cfg = SimConfig::new(3.0, SimConfig::uniform_grid(3.0, 6), 77).with_jump_log();
        let a = simulate(&ones(2), &s0, &cfg).unwrap();
        let b = simulate(&ones(2), &s0, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(!a.jump_log.is_empty());
    }

    #[test]
    fn snapshots_match_output_times() {
        let s0 = ParticleState::new(0.0, 1, vec![0.0; 4], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let times = vec![0.0, 0.3, 0.3, 1.7, 2.0];
        let traj = simulate(&ones(1), &s0, &SimConfig::new(2.0, times.clone(), 1)).unwrap();
        let got: Vec<f64> = traj.states.iter().map(|s| s.t).collect();
        assert_eq!(got, times);
    }

    #[test]
    fn single_replica_ensemble_matches_direct_run() {
        let law = ProductLaw::new(
            crate::init::AxisLaw::Gaussian { mean: vec![0.0], std: vec![1.0] },
            crate::init::AxisLaw::Gaussian { mean: vec![0.0], std: vec![1.0] },
        )
        .unwrap();
        let cfg = SimConfig::new(1.0, vec![0.0, 0.5, 1.0], 5);
        let obs = [Observable::VelocitySquare, Observable::BracketMoment { q: 0.0 }];
        let summary = ensemble(&ones(1), &law, 4, 1, &cfg, &obs, Exec::Sequential).unwrap();
        let mut rng = replica_rng(5, 0);
        let s0 = law.sample_state(4, &mut rng);
        let traj = simulate_with_rng(&ones(1), &s0, &cfg, &mut rng).unwrap();
        for (t, s) in traj.states.iter().enumerate() {
            assert_eq!(summary.mean[0][t], obs[0].eval(s));
            assert_eq!(summary.mean[1][t], 1.0);
            assert_eq!(summary.variance[0][t], 0.0);
        }
    }
}
