//! Deterministic Cucker–Smale system, integrated with classical RK4.
//!
//! `dr_k/dt = v_k`, `dv_k/dt = (1/N) Σ_j ψ(r_k − r_j)(v_j − v_k)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::kernels::{dist_sq, PsiKernel};
use crate::state::ParticleState;

/// Right-hand side `(dr/dt, dv/dt)`, each flattened `N × d`.
///
/// Pair terms are accumulated once per unordered pair with opposite signs,
/// so `Σ_k dv_k/dt` vanishes up to summation rounding.
pub fn ode_rhs(psi: &PsiKernel, state: &ParticleState) -> (Vec<f64>, Vec<f64>) {
    let mut dv = vec![0.0; state.velocities.len()];
    rhs_into(psi, state.n, state.d, &state.positions, &state.velocities, &mut dv);
    (state.velocities.clone(), dv)
}

fn rhs_into(psi: &PsiKernel, n: usize, d: usize, r: &[f64], v: &[f64], dv: &mut [f64]) {
    dv.iter_mut().for_each(|x| *x = 0.0);
    let inv_n = 1.0 / n as f64;
    for k in 0..n {
        let rk = &r[k * d..(k + 1) * d];
        for j in (k + 1)..n {
            let w = psi.eval_norm_sq(dist_sq(rk, &r[j * d..(j + 1) * d])) * inv_n;
            for a in 0..d {
                let f = w * (v[j * d + a] - v[k * d + a]);
                dv[k * d + a] += f;
                dv[j * d + a] -= f;
            }
        }
    }
}

/// States at every integration step, `states[0]` being the initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeTrajectory {
    pub states: Vec<ParticleState>,
}

struct Rk4 {
    n: usize,
    d: usize,
    k_r: [Vec<f64>; 4],
    k_v: [Vec<f64>; 4],
    tmp_r: Vec<f64>,
    tmp_v: Vec<f64>,
}

impl Rk4 {
    fn new(n: usize, d: usize) -> Self {
        let z = || vec![0.0; n * d];
        Rk4 { n, d, k_r: [z(), z(), z(), z()], k_v: [z(), z(), z(), z()], tmp_r: z(), tmp_v: z() }
    }

    #[allow(clippy::needless_range_loop)]
    fn step(&mut self, psi: &PsiKernel, s: &mut ParticleState, h: f64) {
        let (n, d) = (self.n, self.d);
        let coeffs = [0.0, 0.5, 0.5, 1.0];
        for stage in 0..4 {
            if stage == 0 {
                self.tmp_r.copy_from_slice(&s.positions);
                self.tmp_v.copy_from_slice(&s.velocities);
            } else {
                let c = coeffs[stage] * h;
                for i in 0..n * d {
                    self.tmp_r[i] = s.positions[i] + c * self.k_r[stage - 1][i];
                    self.tmp_v[i] = s.velocities[i] + c * self.k_v[stage - 1][i];
                }
            }
            self.k_r[stage].copy_from_slice(&self.tmp_v);
            rhs_into(psi, n, d, &self.tmp_r, &self.tmp_v, &mut self.k_v[stage]);
        }
        let h6 = h / 6.0;
        for i in 0..n * d {
            s.positions[i] += h6 * (self.k_r[0][i] + 2.0 * self.k_r[1][i] + 2.0 * self.k_r[2][i] + self.k_r[3][i]);
            s.velocities[i] += h6 * (self.k_v[0][i] + 2.0 * self.k_v[1][i] + 2.0 * self.k_v[2][i] + self.k_v[3][i]);
        }
        s.t += h;
    }
}

fn step_count(span: f64, dt: f64) -> Result<usize> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(invalid(format!("dt must be > 0, got {dt}")));
    }
    if !(span.is_finite() && span >= 0.0) {
        return Err(invalid(format!("integration span must be finite and >= 0, got {span}")));
    }
    Ok(((span / dt) - 1e-9).ceil().max(0.0) as usize)
}

/// Integrate to `t_end` with `ceil(t_end/dt)` equal steps (the last step
/// length is adjusted so the run ends exactly at `t_end`).
pub fn integrate(psi: &PsiKernel, state0: &ParticleState, t_end: f64, dt: f64) -> Result<OdeTrajectory> {
    let span = t_end - state0.t;
    let steps = step_count(span, dt)?;
    let mut s = state0.clone();
    let mut states = Vec::with_capacity(steps + 1);
    states.push(s.clone());
    if steps == 0 {
        return Ok(OdeTrajectory { states });
    }
    let h = span / steps as f64;
    let mut rk = Rk4::new(s.n, s.d);
    for i in 1..=steps {
        rk.step(psi, &mut s, h);
        s.t = state0.t + h * i as f64;
        if !s.is_finite() {
            return Err(Error::NonFinite { t: s.t });
        }
        states.push(s.clone());
    }
    Ok(OdeTrajectory { states })
}

/// Integrate and keep only snapshots at `output_times` (sorted, `≥ state0.t`).
/// Each output time is hit exactly by shortening the step that crosses it.
pub fn integrate_at(psi: &PsiKernel, state0: &ParticleState, output_times: &[f64], dt: f64) -> Result<OdeTrajectory> {
    if output_times.windows(2).any(|w| w[0] > w[1]) || output_times.first().is_some_and(|t| *t < state0.t) {
        return Err(invalid("output times must be sorted and not precede the initial state"));
    }
    let mut s = state0.clone();
    let mut rk = Rk4::new(s.n, s.d);
    let mut states = Vec::with_capacity(output_times.len());
    for &target in output_times {
        let span = target - s.t;
        let steps = step_count(span, dt)?;
        if steps > 0 {
            let h = span / steps as f64;
            let t0 = s.t;
            for i in 1..=steps {
                rk.step(psi, &mut s, h);
                s.t = t0 + h * i as f64;
            }
            if !s.is_finite() {
                return Err(Error::NonFinite { t: s.t });
            }
        }
        s.t = target;
        states.push(s.clone());
    }
    Ok(OdeTrajectory { states })
}

/// Flocking diagnostics at one time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlockingDiagnostics {
    pub t: f64,
    /// Σ_k |v_k − v_c|².
    pub velocity_spread: f64,
    /// Σ_k |r_k − r_c(t)|² with `r_c(t) = r_c(0) + t v_c`.
    pub position_spread: f64,
}

/// Velocity and position spreads along a trajectory; the centre of mass and
/// mean velocity are taken from the first state.
pub fn flocking_diagnostics(states: &[ParticleState]) -> Result<Vec<FlockingDiagnostics>> {
    let first = states.first().ok_or_else(|| invalid("empty trajectory"))?;
    let vc = first.mean_velocity();
    let rc0 = first.mean_position();
    let t0 = first.t;
    Ok(states
        .iter()
        .map(|s| {
            let rc: Vec<f64> = rc0.iter().zip(&vc).map(|(r, v)| r + (s.t - t0) * v).collect();
            let velocity_spread = (0..s.n).map(|k| dist_sq(s.v(k), &vc)).sum();
            let position_spread = (0..s.n).map(|k| dist_sq(s.r(k), &rc)).sum();
            FlockingDiagnostics { t: s.t, velocity_spread, position_spread }
        })
        .collect())
}
