//! Stochastic Cucker–Smale flocking: exact jump-process simulation of the
//! N-particle system, mean-field solvers, measure distances, analytic bound
//! envelopes and certification of the underlying moment inequalities.
//!
//! Ensemble, certification and mean-field work is data-parallel via rayon
//! when the `parallel` feature is enabled (the default); [`Exec`] selects the
//! sequential or parallel path at run time and both give identical results.

pub mod assignment;
pub mod bounds;
pub mod error;
pub mod exec;
pub mod ineq_oracle;
pub mod init;
pub mod io;
pub mod kernels;
pub mod meanfield;
pub mod metrics;
pub mod ode_baseline;
pub mod particle_system;
pub mod quad;
pub mod rng;
pub mod state;

pub use error::{Error, Result};
pub use exec::Exec;
pub use init::{AxisLaw, ProductLaw};
pub use kernels::{KernelSet, NoiseDensity, PsiKernel, SigmaKernel};
pub use meanfield::MarginalFlow;
pub use metrics::EmpiricalMeasure;
pub use particle_system::{SimConfig, Trajectory};
pub use state::ParticleState;
