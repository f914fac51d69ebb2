//! Initial laws `μ₀ = (position law) ⊗ (velocity law)`, sampled i.i.d. per particle.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::state::ParticleState;

/// Law of one `d`-dimensional coordinate block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum AxisLaw {
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
    UniformBox { lo: Vec<f64>, hi: Vec<f64> },
    Point { at: Vec<f64> },
}

impl AxisLaw {
    pub fn dim(&self) -> usize {
        match self {
            AxisLaw::Gaussian { mean, .. } => mean.len(),
            AxisLaw::UniformBox { lo, .. } => lo.len(),
            AxisLaw::Point { at } => at.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            AxisLaw::Gaussian { mean, std } => {
                mean.len() == std.len()
                    && mean.iter().all(|m| m.is_finite())
                    && std.iter().all(|s| s.is_finite() && *s >= 0.0)
            }
            AxisLaw::UniformBox { lo, hi } => {
                lo.len() == hi.len() && lo.iter().zip(hi).all(|(a, b)| a.is_finite() && b.is_finite() && a <= b)
            }
            AxisLaw::Point { at } => at.iter().all(|x| x.is_finite()),
        };
        if !ok || self.dim() == 0 {
            return Err(invalid(format!("malformed initial law {self:?}")));
        }
        Ok(())
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, AxisLaw::Point { .. })
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            AxisLaw::Gaussian { mean, std } => {
                for ((o, m), s) in out.iter_mut().zip(mean).zip(std) {
                    let z: f64 = StandardNormal.sample(rng);
                    *o = m + s * z;
                }
            }
            AxisLaw::UniformBox { lo, hi } => {
                for ((o, a), b) in out.iter_mut().zip(lo).zip(hi) {
                    let u: f64 = rng.random();
                    *o = a + (b - a) * u;
                }
            }
            AxisLaw::Point { at } => out.copy_from_slice(at),
        }
    }
}

/// Product law of one particle; N particles are drawn i.i.d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductLaw {
    pub position: AxisLaw,
    pub velocity: AxisLaw,
}

impl ProductLaw {
    pub fn new(position: AxisLaw, velocity: AxisLaw) -> Result<Self> {
        let law = ProductLaw { position, velocity };
        law.validate()?;
        Ok(law)
    }

    pub fn validate(&self) -> Result<()> {
        self.position.validate()?;
        self.velocity.validate()?;
        if self.position.dim() != self.velocity.dim() {
            return Err(invalid("position and velocity laws must share the dimension"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.position.dim()
    }

    pub fn is_deterministic(&self) -> bool {
        self.position.is_deterministic() && self.velocity.is_deterministic()
    }

    /// Draw one particle `(r, v)` into the given buffers.
    pub fn sample_particle<R: Rng + ?Sized>(&self, rng: &mut R, r: &mut [f64], v: &mut [f64]) {
        self.position.sample_into(rng, r);
        self.velocity.sample_into(rng, v);
    }

    /// `n` i.i.d. particles at time 0.
    pub fn sample_state<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> ParticleState {
        let d = self.dim();
        let mut positions = vec![0.0; n * d];
        let mut velocities = vec![0.0; n * d];
        for k in 0..n {
            self.sample_particle(rng, &mut positions[k * d..(k + 1) * d], &mut velocities[k * d..(k + 1) * d]);
        }
        ParticleState { t: 0.0, n, d, positions, velocities }
    }
}
