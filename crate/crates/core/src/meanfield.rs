//! Mean-field (Vlasov–McKean) jump dynamics.
//!
//! Three routes to the nonlinear marginal flow `μ_t`:
//!
//! * [`direct_mckean`]: the `M`-particle system itself; its empirical measure
//!   approximates `μ_t` by propagation of chaos.
//! * [`linear_jump_simulate`]: `M` independent particles jumping against a
//!   frozen flow. A particle at `(r, v)` jumps at rate
//!   `∫ ψ(r − q) σ(v − w) ν_s(dq, dw)`; the partner `(q, w)` is drawn with
//!   weight `ψ(r − q) σ(v − w)` and the new velocity is `w + u`, `u ~ a`. The
//!   frozen flow is piecewise constant in time (left grid point).
//! * [`picard_iterate`]: fixed-point iteration of the linear step, started
//!   from free transport of `μ₀` and run with common random numbers keyed by
//!   particle id.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exec::Exec;
use crate::init::ProductLaw;
use crate::kernels::{dist_sq, norm_sq, KernelSet};
use crate::metrics::{metric_t, w1_exact_with, EmpiricalMeasure, W1Options};
use crate::particle_system::{simulate, SimConfig, Trajectory};
use crate::rng::{replica_rng, replica_seed, rng_from_seed};
use crate::state::ParticleState;

/// Time-indexed empirical marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalFlow {
    pub times: Vec<f64>,
    pub measures: Vec<EmpiricalMeasure>,
}

impl MarginalFlow {
    pub fn new(times: Vec<f64>, measures: Vec<EmpiricalMeasure>) -> Result<Self> {
        if times.is_empty() || times.len() != measures.len() {
            return Err(invalid("flow needs one measure per time and at least one time"));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("flow times must be strictly increasing"));
        }
        if times[0] < 0.0 {
            return Err(invalid("flow times must start at or after 0"));
        }
        let (n, d) = (measures[0].len(), measures[0].dim());
        if measures.iter().any(|m| m.len() != n || m.dim() != d) {
            return Err(invalid("all flow measures must have equal sample counts and dimension"));
        }
        Ok(MarginalFlow { times, measures })
    }

    /// Flow of the particle snapshots of a trajectory.
    pub fn from_states(states: &[ParticleState]) -> Result<Self> {
        Self::new(states.iter().map(|s| s.t).collect(), states.iter().map(EmpiricalMeasure::from_state).collect())
    }

    /// Index of the last grid time `≤ t` (0 if `t` precedes the grid).
    pub fn index_at(&self, t: f64) -> usize {
        self.times.partition_point(|s| *s <= t).saturating_sub(1)
    }

    /// Measure frozen at the left grid point of `t`.
    pub fn at(&self, t: f64) -> &EmpiricalMeasure {
        &self.measures[self.index_at(t)]
    }

    pub fn sample_count(&self) -> usize {
        self.measures[0].len()
    }

    pub fn dim(&self) -> usize {
        self.measures[0].dim()
    }
}

/// Direct McKean approximation: the `m`-particle system from i.i.d. `μ₀` draws
/// (seeded from `cfg.seed`) and its empirical flow at `cfg.output_times`.
pub fn direct_mckean(ks: &KernelSet, law: &ProductLaw, m: usize, cfg: &SimConfig) -> Result<(MarginalFlow, Trajectory)> {
    if m < 2 {
        return Err(invalid("direct McKean approximation needs at least 2 particles"));
    }
    if law.dim() != ks.dim() {
        return Err(Error::DimensionMismatch { expected: ks.dim(), got: law.dim() });
    }
    let mut rng = rng_from_seed(replica_seed(cfg.seed, u64::MAX));
    let state0 = law.sample_state(m, &mut rng);
    let traj = simulate(ks, &state0, cfg)?;
    let flow = MarginalFlow::from_states(&traj.states)?;
    Ok((flow, traj))
}

/// `∫ ψ(r − q) σ(v − w) ν(dq, dw)` for a frozen empirical measure ν.
pub fn linear_rate(ks: &KernelSet, frozen: &EmpiricalMeasure, r: &[f64], v: &[f64]) -> f64 {
    let d = frozen.dim();
    let pos = frozen.positions();
    let vel = frozen.velocities();
    frozen
        .weights()
        .iter()
        .enumerate()
        .map(|(i, w)| {
            w * ks.psi.eval_norm_sq(dist_sq(r, &pos[i * d..(i + 1) * d]))
                * ks.sigma.eval_norm_sq(dist_sq(v, &vel[i * d..(i + 1) * d]))
        })
        .sum()
}

/// Frozen measure with materialised positions and its largest speed.
struct FrozenSlice {
    positions: Vec<f64>,
    velocities: Vec<f64>,
    weights: Vec<f64>,
    max_speed: f64,
}

impl FrozenSlice {
    fn new(em: &EmpiricalMeasure) -> Self {
        let max_speed = (0..em.len()).map(|i| norm_sq(em.velocity(i))).fold(0.0, f64::max).sqrt();
        FrozenSlice {
            positions: em.positions().into_owned(),
            velocities: em.velocities().to_vec(),
            weights: em.weights().to_vec(),
            max_speed,
        }
    }
}

/// Initial samples of the common-random-number particle streams.
fn crn_initial(law: &ProductLaw, m: usize, seed: u64) -> Vec<(Vec<f64>, Vec<f64>, crate::rng::SimRng)> {
    let d = law.dim();
    (0..m)
        .map(|i| {
            let mut rng = replica_rng(seed, i as u64);
            let mut r = vec![0.0; d];
            let mut v = vec![0.0; d];
            law.sample_particle(&mut rng, &mut r, &mut v);
            (r, v, rng)
        })
        .collect()
}

fn check_flow_grid(flow: &MarginalFlow, ks: &KernelSet) -> Result<()> {
    if flow.times[0] != 0.0 {
        return Err(invalid("frozen flow must start at t = 0"));
    }
    if flow.dim() != ks.dim() {
        return Err(Error::DimensionMismatch { expected: ks.dim(), got: flow.dim() });
    }
    Ok(())
}

/// Linearised jump dynamics against the frozen `flow_prev`.
///
/// Particle `i` uses the stream `replica_seed(cfg.seed, i)` for its initial
/// draw, clocks, acceptances, partner choices and noise, so repeated calls
/// with different frozen flows share random numbers per particle.
pub fn linear_jump_simulate(
    ks: &KernelSet,
    flow_prev: &MarginalFlow,
    law: &ProductLaw,
    m: usize,
    cfg: &SimConfig,
    exec: Exec,
) -> Result<MarginalFlow> {
    check_flow_grid(flow_prev, ks)?;
    cfg.validate_times()?;
    if m == 0 {
        return Err(invalid("need at least one particle"));
    }
    let slices: Vec<FrozenSlice> = flow_prev.measures.iter().map(FrozenSlice::new).collect();
    let d = ks.dim();
    let psi_max = ks.psi.sup();
    let starts = crn_initial(law, m, cfg.seed);
    let paths = exec.try_map(m, |i| {
        let (r0, v0, rng) = &starts[i];
        let mut rng = rng.clone();
        let mut r = r0.clone();
        let mut v = v0.clone();
        let mut u = vec![0.0; d];
        let mut acc = Vec::new();
        // position r is anchored at t_anchor and only re-anchored at accepted jumps
        let mut t_anchor = 0.0;
        let mut r_now = vec![0.0; d];
        let mut t = 0.0;
        let mut seg = 0usize;
        let mut out = Vec::with_capacity(cfg.output_times.len());
        let mut next_out = 0usize;
        let record = |upto: f64, inclusive: bool, t0: f64, r: &[f64], v: &[f64], next_out: &mut usize, out: &mut Vec<(Vec<f64>, Vec<f64>)>| {
            while *next_out < cfg.output_times.len()
                && (cfg.output_times[*next_out] < upto || (inclusive && cfg.output_times[*next_out] <= upto))
            {
                let tau = cfg.output_times[*next_out];
                out.push((r.iter().zip(v).map(|(x, y)| x + (tau - t0) * y).collect(), v.to_vec()));
                *next_out += 1;
            }
        };
        loop {
            let slice = &slices[seg];
            let seg_end = flow_prev.times.get(seg + 1).copied().unwrap_or(f64::INFINITY);
            let speed = norm_sq(&v).sqrt();
            let majorant = psi_max * ks.sigma.bound_within(speed + slice.max_speed);
            let next = if majorant > 0.0 {
                t + Exp::new(majorant).map_err(|e| invalid(e.to_string()))?.sample(&mut rng)
            } else {
                f64::INFINITY
            };
            if next >= seg_end && seg_end <= cfg.t_end {
                // the clock restarts on the next frozen slice
                t = seg_end;
                seg += 1;
                continue;
            }
            if next > cfg.t_end {
                record(cfg.t_end, true, t_anchor, &r, &v, &mut next_out, &mut out);
                break;
            }
            t = next;
            for a in 0..d {
                r_now[a] = r[a] + (t - t_anchor) * v[a];
            }
            // cumulative partner weights ψσw and the total rate
            acc.clear();
            let mut total = 0.0;
            for (k, w) in slice.weights.iter().enumerate() {
                total += w
                    * ks.psi.eval_norm_sq(dist_sq(&r_now, &slice.positions[k * d..(k + 1) * d]))
                    * ks.sigma.eval_norm_sq(dist_sq(&v, &slice.velocities[k * d..(k + 1) * d]));
                acc.push(total);
            }
            let ratio = total / majorant;
            if ratio > 1.0 + 1e-12 {
                return Err(Error::MajorantViolated { ratio });
            }
            if rng.random::<f64>() < ratio {
                record(t, false, t_anchor, &r, &v, &mut next_out, &mut out);
                r.copy_from_slice(&r_now);
                t_anchor = t;
                let target = rng.random::<f64>() * total;
                let k = acc.partition_point(|c| *c <= target).min(acc.len() - 1);
                ks.noise.sample_into(&mut rng, &mut u);
                for a in 0..d {
                    v[a] = slice.velocities[k * d + a] + u[a];
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite { t });
                }
            }
        }
        Ok(out)
    })?;
    assemble_flow(&cfg.output_times, d, m, &paths)
}

fn assemble_flow(times: &[f64], d: usize, m: usize, paths: &[Vec<(Vec<f64>, Vec<f64>)>]) -> Result<MarginalFlow> {
    let measures = (0..times.len())
        .map(|ti| {
            let mut pos = Vec::with_capacity(m * d);
            let mut vel = Vec::with_capacity(m * d);
            for p in paths {
                pos.extend_from_slice(&p[ti].0);
                vel.extend_from_slice(&p[ti].1);
            }
            EmpiricalMeasure::uniform(d, pos, vel)
        })
        .collect::<Result<Vec<_>>>()?;
    MarginalFlow::new(times.to_vec(), measures)
}

/// Free transport of the common-random-number initial samples.
pub fn transport_flow(law: &ProductLaw, m: usize, cfg: &SimConfig) -> Result<MarginalFlow> {
    cfg.validate_times()?;
    let d = law.dim();
    let paths: Vec<Vec<(Vec<f64>, Vec<f64>)>> = crn_initial(law, m, cfg.seed)
        .into_iter()
        .map(|(r, v, _)| {
            cfg.output_times
                .iter()
                .map(|tau| (r.iter().zip(&v).map(|(x, y)| x + tau * y).collect(), v.clone()))
                .collect()
        })
        .collect();
    assemble_flow(&cfg.output_times, d, m, &paths)
}

/// Stopping rule and cost controls of [`picard_iterate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardConfig {
    pub max_iter: usize,
    pub tol: f64,
    /// Times (members of the flow grid) at which successive flows are compared.
    pub check_times: Vec<f64>,
    pub w1: W1Options,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardReport {
    pub iterations: usize,
    /// Sup over the check times of W1 between successive iterates.
    pub discrepancies: Vec<f64>,
    pub converged: bool,
}

impl PicardReport {
    /// True if the discrepancies never increase from the second iteration on.
    pub fn monotone_after_second(&self) -> bool {
        self.discrepancies.iter().skip(1).collect::<Vec<_>>().windows(2).all(|w| w[1] <= w[0])
    }
}

/// Picard iteration on the marginal flow over the grid `cfg.output_times`
/// (which must start at 0).
pub fn picard_iterate(
    ks: &KernelSet,
    law: &ProductLaw,
    m: usize,
    cfg: &SimConfig,
    picard: &PicardConfig,
    exec: Exec,
) -> Result<(MarginalFlow, PicardReport)> {
    if picard.max_iter == 0 {
        return Err(invalid("max_iter must be >= 1"));
    }
    if cfg.output_times.first() != Some(&0.0) {
        return Err(invalid("the Picard grid must start at t = 0"));
    }
    let mut check_idx = Vec::with_capacity(picard.check_times.len());
    for &t in &picard.check_times {
        let i = cfg
            .output_times
            .iter()
            .position(|s| (s - t).abs() <= 1e-12 * t.abs().max(1.0))
            .ok_or_else(|| invalid(format!("check time {t} is not on the flow grid")))?;
        check_idx.push(i);
    }
    let mut flow = transport_flow(law, m, cfg)?;
    let mut report = PicardReport { iterations: 0, discrepancies: Vec::new(), converged: false };
    for _ in 0..picard.max_iter {
        let next = linear_jump_simulate(ks, &flow, law, m, cfg, exec)?;
        let disc = exec
            .try_map(check_idx.len(), |c| {
                let i = check_idx[c];
                Ok::<f64, Error>(w1_exact_with(&next.measures[i], &flow.measures[i], 0.0, &picard.w1)?.value)
            })?
            .into_iter()
            .fold(0.0, f64::max);
        report.iterations += 1;
        report.discrepancies.push(disc);
        flow = next;
        if disc < picard.tol {
            report.converged = true;
            break;
        }
    }
    Ok((flow, report))
}

/// Bootstrap W1 estimate: `resamples` independent multinomial resamplings of
/// both sides to `n` points each, solved exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapW1 {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
    pub resamples: usize,
}

pub fn w1_bootstrap(
    a: &EmpiricalMeasure,
    b: &EmpiricalMeasure,
    shift: f64,
    n: usize,
    resamples: usize,
    seed: u64,
    exec: Exec,
) -> Result<BootstrapW1> {
    if resamples == 0 || n == 0 {
        return Err(invalid("bootstrap needs at least one resample of at least one point"));
    }
    let values = exec.try_map(resamples, |k| {
        let ra = a.resample(n, &mut replica_rng(seed, 2 * k as u64));
        let rb = b.resample(n, &mut replica_rng(seed, 2 * k as u64 + 1));
        let opts = W1Options { max_size: n, resample_seed: 0 };
        Ok::<f64, Error>(w1_exact_with(&ra, &rb, shift, &opts)?.value)
    })?;
    let mean = values.iter().sum::<f64>() / resamples as f64;
    let var = if resamples > 1 {
        values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (resamples - 1) as f64
    } else {
        0.0
    };
    Ok(BootstrapW1 { mean, std_error: var.sqrt(), samples: n, resamples })
}

/// Controls of [`chaos_study`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosConfig {
    pub n_list: Vec<usize>,
    pub m_ref: usize,
    /// Independent N-particle runs per N; particle 1 of each is the tagged sample.
    pub replicas: usize,
    pub bootstrap: usize,
    /// Points per side in each bootstrap assignment problem.
    pub w1_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosRow {
    pub n: usize,
    pub t: f64,
    pub w1: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosReport {
    pub rows: Vec<ChaosRow>,
    /// W1 between the reference and an independently seeded reference, per time.
    pub noise_floor: Vec<ChaosRow>,
}

/// W1 between the tagged-particle marginal of the N-particle system and the
/// `m_ref` direct McKean reference, for each N and output time.
pub fn chaos_study(ks: &KernelSet, law: &ProductLaw, cfg: &SimConfig, chaos: &ChaosConfig, exec: Exec) -> Result<ChaosReport> {
    if chaos.n_list.iter().any(|&n| n >= chaos.m_ref || n == 0) {
        return Err(invalid("every N must satisfy 1 <= N < m_ref"));
    }
    if chaos.replicas == 0 {
        return Err(invalid("need at least one replica"));
    }
    let d = ks.dim();
    let (reference, _) = direct_mckean(ks, law, chaos.m_ref, cfg)?;
    let mut cfg2 = cfg.clone();
    cfg2.seed = replica_seed(cfg.seed, 0xF100_0000);
    let (reference2, _) = direct_mckean(ks, law, chaos.m_ref, &cfg2)?;
    let boot_seed = replica_seed(cfg.seed, 0xB007);

    let mut noise_floor = Vec::new();
    for (ti, &t) in cfg.output_times.iter().enumerate() {
        let b = w1_bootstrap(&reference.measures[ti], &reference2.measures[ti], 0.0, chaos.w1_samples, chaos.bootstrap, boot_seed, exec)?;
        noise_floor.push(ChaosRow { n: chaos.m_ref, t, w1: b.mean, std_error: b.std_error });
    }

    let mut rows = Vec::new();
    for &n in &chaos.n_list {
        let mut cfg_n = cfg.clone();
        cfg_n.seed = replica_seed(cfg.seed, 0xC000_0000 + n as u64);
        let tagged = crate::particle_system::map_replicas(ks, law, n, chaos.replicas, &cfg_n, exec, |_, _, traj| {
            traj.states.iter().map(|s| (s.r(0).to_vec(), s.v(0).to_vec())).collect::<Vec<_>>()
        })?;
        for (ti, &t) in cfg.output_times.iter().enumerate() {
            let pos: Vec<f64> = tagged.iter().flat_map(|p| p[ti].0.clone()).collect();
            let vel: Vec<f64> = tagged.iter().flat_map(|p| p[ti].1.clone()).collect();
            let em = EmpiricalMeasure::uniform(d, pos, vel)?;
            let b = w1_bootstrap(&em, &reference.measures[ti], 0.0, chaos.w1_samples, chaos.bootstrap, boot_seed, exec)?;
            rows.push(ChaosRow { n, t, w1: b.mean, std_error: b.std_error });
        }
    }
    Ok(ChaosReport { rows, noise_floor })
}

/// Average ground-metric distance under the identity coupling (sample `i`
/// with sample `i`); an upper bound of W1 for equal-size uniform measures.
pub fn identity_coupling_cost(a: &EmpiricalMeasure, b: &EmpiricalMeasure, shift: f64) -> Result<f64> {
    if a.len() != b.len() || a.dim() != b.dim() {
        return Err(invalid("identity coupling needs equal sizes and dimensions"));
    }
    let d = a.dim();
    let (pa, pb) = (a.positions(), b.positions());
    let n = a.len();
    Ok((0..n)
        .map(|i| metric_t(&pa[i * d..(i + 1) * d], a.velocity(i), &pb[i * d..(i + 1) * d], b.velocity(i), shift))
        .sum::<f64>()
        / n as f64)
}
