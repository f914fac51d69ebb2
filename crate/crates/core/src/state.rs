use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Time-stamped positions and velocities of `n` particles in dimension `d`,
/// stored row-major (`n × d`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleState {
    pub t: f64,
    pub n: usize,
    pub d: usize,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
}

impl ParticleState {
    pub fn new(t: f64, d: usize, positions: Vec<f64>, velocities: Vec<f64>) -> Result<Self> {
        if d == 0 {
            return Err(invalid("dimension must be >= 1"));
        }
        if positions.is_empty() || !positions.len().is_multiple_of(d) {
            return Err(invalid(format!(
                "positions length {} is not a positive multiple of d = {d}",
                positions.len()
            )));
        }
        if velocities.len() != positions.len() {
            return Err(Error::DimensionMismatch { expected: positions.len(), got: velocities.len() });
        }
        let s = ParticleState { t, n: positions.len() / d, d, positions, velocities };
        if !s.is_finite() {
            return Err(Error::NonFinite { t });
        }
        Ok(s)
    }

    /// Build from per-particle rows.
    pub fn from_rows(t: f64, positions: &[Vec<f64>], velocities: &[Vec<f64>]) -> Result<Self> {
        let d = positions.first().map(|r| r.len()).unwrap_or(0);
        if positions.iter().chain(velocities).any(|row| row.len() != d) {
            return Err(invalid("all position and velocity rows must have the same length"));
        }
        Self::new(t, d, positions.concat(), velocities.concat())
    }

    #[inline]
    pub fn r(&self, k: usize) -> &[f64] {
        &self.positions[k * self.d..(k + 1) * self.d]
    }

    #[inline]
    pub fn v(&self, k: usize) -> &[f64] {
        &self.velocities[k * self.d..(k + 1) * self.d]
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.positions.iter().all(|x| x.is_finite())
            && self.velocities.iter().all(|x| x.is_finite())
    }

    /// Exact free transport `r ← r + Δt·v` up to time `t`.
    pub fn transport_to(&mut self, t: f64) {
        let dt = t - self.t;
        if dt != 0.0 {
            for (r, v) in self.positions.iter_mut().zip(&self.velocities) {
                *r += dt * v;
            }
        }
        self.t = t;
    }

    /// Copy of the state transported to time `t`.
    pub fn transported(&self, t: f64) -> Self {
        let mut s = self.clone();
        s.transport_to(t);
        s
    }

    /// Mean velocity `(1/N) Σ v_k`.
    pub fn mean_velocity(&self) -> Vec<f64> {
        column_mean(&self.velocities, self.n, self.d)
    }

    /// Centre of mass `(1/N) Σ r_k`.
    pub fn mean_position(&self) -> Vec<f64> {
        column_mean(&self.positions, self.n, self.d)
    }

    /// Σ_k |v_k|².
    pub fn kinetic_sum(&self) -> f64 {
        self.velocities.iter().map(|x| x * x).sum()
    }
}

fn column_mean(data: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d];
    for row in data.chunks_exact(d) {
        for (acc, x) in m.iter_mut().zip(row) {
            *acc += x;
        }
    }
    m.iter_mut().for_each(|x| *x /= n as f64);
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_and_transport() {
        let mut s = ParticleState::from_rows(0.0, &[vec![0.0, 1.0], vec![2.0, 3.0]], &[vec![1.0, 0.0], vec![-1.0, 2.0]]).unwrap();
        assert_eq!(s.n, 2);
        assert_eq!(s.r(1), &[2.0, 3.0]);
        s.transport_to(2.0);
        assert_eq!(s.r(0), &[2.0, 1.0]);
        assert_eq!(s.r(1), &[0.0, 7.0]);
        assert_eq!(s.mean_velocity(), vec![0.0, 1.0]);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(ParticleState::new(0.0, 2, vec![1.0; 3], vec![1.0; 3]).is_err());
        assert!(ParticleState::new(0.0, 1, vec![1.0; 3], vec![1.0; 2]).is_err());
        assert!(ParticleState::new(0.0, 1, vec![f64::NAN], vec![1.0]).is_err());
    }
}
