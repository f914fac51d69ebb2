//! Functionals and distances of weighted point measures on phase space.
//!
//! Total variation follows the sup-over-`‖g‖∞ ≤ 1` normalisation, so it
//! ranges over `[0, 2]` and equals 2 for mutually singular measures.

use std::borrow::Cow;
use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::error::{invalid, Error, Result};
use crate::kernels::{bracket, norm_sq};
use crate::rng::{rng_from_seed, SimRng};
use crate::state::ParticleState;

/// Weighted point measure `Σ w_i δ_{(r_i, v_i)}` on `R^{2d}`.
///
/// Free transport is stored as a pending shift `τ`: the materialised
/// positions are `r_i + τ v_i`. Composing shifts `t` and `−t` therefore
/// restores the original representation bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    d: usize,
    positions: Vec<f64>,
    velocities: Vec<f64>,
    weights: Vec<f64>,
    shift: f64,
}

impl EmpiricalMeasure {
    pub fn new(d: usize, positions: Vec<f64>, velocities: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(invalid("dimension must be >= 1"));
        }
        if positions.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        if !positions.len().is_multiple_of(d) || velocities.len() != positions.len() || weights.len() != positions.len() / d {
            return Err(invalid("inconsistent sample array lengths"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("weights must sum to 1, got {total}")));
        }
        if positions.iter().chain(&velocities).any(|x| !x.is_finite()) {
            return Err(invalid("samples must be finite"));
        }
        Ok(EmpiricalMeasure { d, positions, velocities, weights, shift: 0.0 })
    }

    /// Equal weights `1/n`.
    pub fn uniform(d: usize, positions: Vec<f64>, velocities: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(invalid("dimension must be >= 1"));
        }
        let n = positions.len() / d;
        if n == 0 {
            return Err(Error::EmptyMeasure);
        }
        Self::new(d, positions, velocities, vec![1.0 / n as f64; n])
    }

    /// Empirical measure `(1/N) Σ δ_{x_k}` of a particle configuration.
    pub fn from_state(s: &ParticleState) -> Self {
        let n = s.n;
        EmpiricalMeasure {
            d: s.d,
            positions: s.positions.clone(),
            velocities: s.velocities.clone(),
            weights: vec![1.0 / n as f64; n],
            shift: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn velocities(&self) -> &[f64] {
        &self.velocities
    }

    pub fn velocity(&self, i: usize) -> &[f64] {
        &self.velocities[i * self.d..(i + 1) * self.d]
    }

    /// Positions with any pending transport applied.
    pub fn positions(&self) -> Cow<'_, [f64]> {
        if self.shift == 0.0 {
            Cow::Borrowed(&self.positions)
        } else {
            Cow::Owned(self.positions.iter().zip(&self.velocities).map(|(r, v)| r + self.shift * v).collect())
        }
    }

    pub fn is_uniform(&self) -> bool {
        let w0 = 1.0 / self.len() as f64;
        self.weights.iter().all(|w| (w - w0).abs() <= 1e-12 * w0.max(1e-300))
    }

    /// Subset / reordering by sample indices, with equal weights.
    pub fn select_uniform(&self, idx: &[usize]) -> Self {
        let d = self.d;
        let pos = self.positions();
        let mut positions = Vec::with_capacity(idx.len() * d);
        let mut velocities = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            positions.extend_from_slice(&pos[i * d..(i + 1) * d]);
            velocities.extend_from_slice(&self.velocities[i * d..(i + 1) * d]);
        }
        EmpiricalMeasure { d, positions, velocities, weights: vec![1.0 / idx.len() as f64; idx.len()], shift: 0.0 }
    }

    /// Multinomial resample to `n` equally weighted samples.
    pub fn resample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Self {
        let mut cdf = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        for w in &self.weights {
            acc += w;
            cdf.push(acc);
        }
        let last = self.len() - 1;
        let idx: Vec<usize> = (0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>() * acc;
                cdf.partition_point(|c| *c <= u).min(last)
            })
            .collect();
        self.select_uniform(&idx)
    }
}

/// `‖ν‖_q = Σ w_i ⟨v_i⟩^q`.
pub fn moment_q(em: &EmpiricalMeasure, q: f64) -> Result<f64> {
    if !(q.is_finite() && q >= 0.0) {
        return Err(invalid(format!("moment order must be >= 0, got {q}")));
    }
    if q == 0.0 {
        return Ok(em.weights.iter().sum());
    }
    Ok((0..em.len()).map(|i| em.weights[i] * bracket(em.velocity(i)).powf(q)).sum())
}

/// `Σ w_i exp(δ ⟨v_i⟩^κ)`.
pub fn exp_moment(em: &EmpiricalMeasure, delta: f64, kappa: f64) -> Result<f64> {
    if !(delta.is_finite() && delta >= 0.0) || !(kappa > 0.0 && kappa <= 2.0) {
        return Err(invalid("exp_moment needs delta >= 0 and kappa in (0, 2]"));
    }
    Ok((0..em.len()).map(|i| em.weights[i] * (delta * bracket(em.velocity(i)).powf(kappa)).exp()).sum())
}

/// Push-forward under `(r, v) ↦ (r + t v, v)`.
pub fn free_transport(em: &EmpiricalMeasure, t: f64) -> EmpiricalMeasure {
    let mut out = em.clone();
    out.shift += t;
    out
}

/// `|(r,v) − (r̃,ṽ)|_t = |(r − t v) − (r̃ − t ṽ)| + |v − ṽ|`.
pub fn metric_t(r: &[f64], v: &[f64], r2: &[f64], v2: &[f64], t: f64) -> f64 {
    let mut a = 0.0;
    let mut b = 0.0;
    for i in 0..r.len() {
        let dv = v[i] - v2[i];
        let dr = (r[i] - r2[i]) - t * dv;
        a += dr * dr;
        b += dv * dv;
    }
    a.sqrt() + b.sqrt()
}

/// Resampling policy for [`w1_exact_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct W1Options {
    /// Largest assignment problem solved; bigger or weighted inputs are resampled.
    pub max_size: usize,
    /// Seed of the resampling stream. Both inputs use a fresh stream with this
    /// seed, so equal-size uniform inputs are resampled with identical indices.
    pub resample_seed: u64,
}

impl Default for W1Options {
    fn default() -> Self {
        W1Options { max_size: 1024, resample_seed: 0x5E_ED0F_0A55 }
    }
}

/// W1 value with estimator metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct W1Estimate {
    pub value: f64,
    /// Number of samples per side in the solved assignment problem.
    pub samples: usize,
    pub resampled: bool,
}

/// Exact W1 for the ground metric `|·|_t` (resampling only when required).
pub fn w1_exact(em1: &EmpiricalMeasure, em2: &EmpiricalMeasure, t: f64) -> Result<f64> {
    Ok(w1_exact_with(em1, em2, t, &W1Options::default())?.value)
}

pub fn w1_exact_with(em1: &EmpiricalMeasure, em2: &EmpiricalMeasure, t: f64, opts: &W1Options) -> Result<W1Estimate> {
    if em1.is_empty() || em2.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    if em1.d != em2.d {
        return Err(Error::DimensionMismatch { expected: em1.d, got: em2.d });
    }
    let exact = em1.len() == em2.len() && em1.len() <= opts.max_size && em1.is_uniform() && em2.is_uniform();
    let (a, b) = if exact {
        (Cow::Borrowed(em1), Cow::Borrowed(em2))
    } else {
        let n = opts.max_size.min(em1.len().max(em2.len()));
        let mut rng: SimRng = rng_from_seed(opts.resample_seed);
        let a = em1.resample(n, &mut rng);
        let mut rng: SimRng = rng_from_seed(opts.resample_seed);
        let b = em2.resample(n, &mut rng);
        (Cow::Owned(a), Cow::Owned(b))
    };
    let n = a.len();
    let d = a.d;
    let pa = a.positions();
    let pb = b.positions();
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        let (ri, vi) = (&pa[i * d..(i + 1) * d], &a.velocities[i * d..(i + 1) * d]);
        for j in 0..n {
            cost[i * n + j] = metric_t(ri, vi, &pb[j * d..(j + 1) * d], &b.velocities[j * d..(j + 1) * d], t);
        }
    }
    let (total, _) = assignment::solve(n, &cost);
    Ok(W1Estimate { value: total / n as f64, samples: n, resampled: !exact })
}

/// Axis-aligned histogram grid on `R^{2d}` (position axes first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bins_per_axis: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl GridSpec {
    /// Equal-width bins over the pooled support, `ceil(n^{1/(2d+2)})` per
    /// axis with `n` the smaller sample count.
    pub fn pooled(em1: &EmpiricalMeasure, em2: &EmpiricalMeasure) -> Result<Self> {
        let n = em1.len().min(em2.len());
        let bins = (n as f64).powf(1.0 / (2 * em1.d + 2) as f64).ceil().max(1.0) as usize;
        Self::pooled_with_bins(em1, em2, bins)
    }

    pub fn pooled_with_bins(em1: &EmpiricalMeasure, em2: &EmpiricalMeasure, bins: usize) -> Result<Self> {
        if em1.d != em2.d {
            return Err(Error::DimensionMismatch { expected: em1.d, got: em2.d });
        }
        if bins == 0 {
            return Err(invalid("need at least one bin per axis"));
        }
        let d = em1.d;
        let mut lo = vec![f64::INFINITY; 2 * d];
        let mut hi = vec![f64::NEG_INFINITY; 2 * d];
        for em in [em1, em2] {
            let pos = em.positions();
            for i in 0..em.len() {
                for a in 0..d {
                    let x = pos[i * d + a];
                    let v = em.velocities[i * d + a];
                    lo[a] = lo[a].min(x);
                    hi[a] = hi[a].max(x);
                    lo[d + a] = lo[d + a].min(v);
                    hi[d + a] = hi[d + a].max(v);
                }
            }
        }
        Ok(GridSpec { bins_per_axis: bins, lo, hi })
    }

    fn bin_of(&self, coord: f64, axis: usize) -> u32 {
        let width = self.hi[axis] - self.lo[axis];
        if width <= 0.0 {
            return 0;
        }
        let b = ((coord - self.lo[axis]) / width * self.bins_per_axis as f64).floor();
        b.clamp(0.0, (self.bins_per_axis - 1) as f64) as u32
    }

    fn histogram(&self, em: &EmpiricalMeasure) -> BTreeMap<Vec<u32>, f64> {
        let d = em.d;
        let pos = em.positions();
        let mut h = BTreeMap::new();
        for i in 0..em.len() {
            let key: Vec<u32> = (0..d)
                .map(|a| self.bin_of(pos[i * d + a], a))
                .chain((0..d).map(|a| self.bin_of(em.velocities[i * d + a], d + a)))
                .collect();
            *h.entry(key).or_insert(0.0) += em.weights[i];
        }
        h
    }
}

/// Histogram TV estimate with metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvEstimate {
    pub value: f64,
    pub bins_per_axis: usize,
    pub occupied_bins: usize,
    /// Always `"sup"`: range [0, 2].
    pub normalization: String,
}

/// `Σ_bins |p_bin − q_bin|`, a grid-biased estimate of a lower bound of the TV distance.
pub fn tv_histogram(em1: &EmpiricalMeasure, em2: &EmpiricalMeasure, grid: &GridSpec) -> Result<f64> {
    Ok(tv_histogram_detailed(em1, em2, grid)?.value)
}

pub fn tv_histogram_detailed(em1: &EmpiricalMeasure, em2: &EmpiricalMeasure, grid: &GridSpec) -> Result<TvEstimate> {
    if em1.d != em2.d {
        return Err(Error::DimensionMismatch { expected: em1.d, got: em2.d });
    }
    if grid.lo.len() != 2 * em1.d || grid.hi.len() != 2 * em1.d {
        return Err(invalid("grid dimension does not match the measures"));
    }
    let mut h = grid.histogram(em1);
    for (k, w) in grid.histogram(em2) {
        *h.entry(k).or_insert(0.0) -= w;
    }
    let value = h.values().map(|x| x.abs()).sum::<f64>().min(2.0);
    Ok(TvEstimate { value, bins_per_axis: grid.bins_per_axis, occupied_bins: h.len(), normalization: "sup".into() })
}

/// Weighted mean velocity.
pub fn mean_velocity(em: &EmpiricalMeasure) -> Vec<f64> {
    let d = em.d;
    let mut m = vec![0.0; d];
    for i in 0..em.len() {
        for (ma, v) in m.iter_mut().zip(em.velocity(i)) {
            *ma += em.weights[i] * v;
        }
    }
    m
}

/// Weighted `Σ w_i |v_i|²`.
pub fn second_moment(em: &EmpiricalMeasure) -> f64 {
    (0..em.len()).map(|i| em.weights[i] * norm_sq(em.velocity(i))).sum()
}
