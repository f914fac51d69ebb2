//! Experiment configuration: TOML schema, dotted-key overrides and lowering
//! into core types.

use std::path::{Path, PathBuf};

use flocksim_core::bounds::BoundEnvelope;
use flocksim_core::ineq_oracle::Lemma;
use flocksim_core::particle_system::Observable;
use flocksim_core::{KernelSet, NoiseDensity, ParticleState, ProductLaw, PsiKernel, SigmaKernel, SimConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Optional task tag; when present it must match the command line task.
    pub task: Option<String>,
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub run: RunConfig,
    pub meanfield: Option<MeanfieldSection>,
    pub chaos: Option<ChaosSection>,
    pub metrics: Option<MetricsSection>,
    pub bounds: Option<BoundsSection>,
    pub certify: Option<CertifySection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n: usize,
    pub d: usize,
    pub psi: PsiKernel,
    pub sigma: SigmaKernel,
    pub noise: NoiseDensity,
    pub mu0: Option<ProductLaw>,
    pub initial: Option<InitialState>,
}

/// Explicit initial configuration, one row per particle.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub positions: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub t_end: Option<f64>,
    pub output_times: Option<Vec<f64>>,
    /// Number of equal output intervals when `output_times` is absent.
    #[serde(default = "default_output_steps")]
    pub output_steps: usize,
    pub seed: Option<u64>,
    #[serde(default = "one")]
    pub replicas: usize,
    pub truncation_m: Option<f64>,
    #[serde(default)]
    pub exclude_diagonal: bool,
    #[serde(default)]
    pub record_jump_log: bool,
    /// Step size of the deterministic integrator.
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub observables: Option<Vec<Observable>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            t_end: None,
            output_times: None,
            output_steps: default_output_steps(),
            seed: None,
            replicas: 1,
            truncation_m: None,
            exclude_diagonal: false,
            record_jump_log: false,
            dt: default_dt(),
            observables: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeanfieldSection {
    pub m: usize,
    #[serde(default = "default_grid_steps")]
    pub grid_steps: usize,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    pub check_times: Option<Vec<f64>>,
    #[serde(default = "default_w1_max")]
    pub w1_max_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChaosSection {
    pub n_list: Vec<usize>,
    pub m_ref: usize,
    #[serde(default = "default_chaos_replicas")]
    pub replicas: usize,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    #[serde(default = "default_chaos_replicas")]
    pub w1_samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsSection {
    /// Run directory or flow/trajectory CSV, relative to the config file.
    pub flow: PathBuf,
    pub flow_b: Option<PathBuf>,
    #[serde(default = "default_moments")]
    pub moments: Vec<f64>,
    pub exp_moment: Option<ExpMomentSpec>,
    #[serde(default)]
    pub distances: DistanceSpec,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpMomentSpec {
    pub delta: f64,
    pub kappa: f64,
}

/// Which distances to evaluate between two flows and how.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceSpec {
    #[serde(default = "yes")]
    pub w1: bool,
    #[serde(default = "yes")]
    pub tv: bool,
    /// Use the time-shifted metric `|r − r' − t(v − v')| + |v − v'|`.
    #[serde(default)]
    pub shifted: bool,
    #[serde(default = "default_w1_max")]
    pub w1_max_size: usize,
    pub tv_bins: Option<usize>,
}

impl Default for DistanceSpec {
    fn default() -> Self {
        DistanceSpec { w1: true, tv: true, shifted: false, w1_max_size: default_w1_max(), tv_bins: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    pub envelopes: Vec<BoundEnvelope>,
    pub times: Option<Vec<f64>>,
    /// Observable whose ensemble mean is checked against every envelope.
    pub check: Option<Observable>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifySection {
    #[serde(default = "all_lemmas")]
    pub lemmas: Vec<Lemma>,
    #[serde(default = "default_p")]
    pub p: Vec<f64>,
    #[serde(default = "default_gamma")]
    pub gamma: Vec<f64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_calibration")]
    pub calibration_factor: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "one_f")]
    pub kappa: f64,
}

fn default_output_steps() -> usize {
    10
}
fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}
fn default_dt() -> f64 {
    1e-3
}
fn default_grid_steps() -> usize {
    100
}
fn default_max_iter() -> usize {
    10
}
fn default_tol() -> f64 {
    0.05
}
fn default_w1_max() -> usize {
    1024
}
fn default_chaos_replicas() -> usize {
    500
}
fn default_bootstrap() -> usize {
    20
}
fn default_moments() -> Vec<f64> {
    vec![2.0, 4.0]
}
fn all_lemmas() -> Vec<Lemma> {
    Lemma::ALL.to_vec()
}
fn default_p() -> Vec<f64> {
    vec![2.0]
}
fn default_gamma() -> Vec<f64> {
    vec![0.0]
}
fn default_samples() -> usize {
    10_000
}
fn default_calibration() -> f64 {
    10.0
}
fn default_delta() -> f64 {
    0.5
}

/// Parsed configuration together with the effective TOML table it came from.
pub struct LoadedConfig {
    pub cfg: ExperimentConfig,
    pub table: toml::Table,
    /// Directory relative paths inside the config are resolved against.
    pub base_dir: PathBuf,
}

pub fn load(path: &Path, overrides: &[String]) -> Result<LoadedConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    let mut table: toml::Table =
        toml::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))?;
    for ov in overrides {
        apply_override(&mut table, ov)?;
    }
    let cfg: ExperimentConfig = table
        .clone()
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Schema(format!("{}: {e}", path.display())))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig { cfg, table, base_dir })
}

/// Apply `key.path=value`; the value is read as a TOML value, else as a string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Schema(format!("override '{spec}' is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Schema(format!("override key '{key}' is malformed")));
    }
    let value = parse_value(raw.trim());
    let (last, prefix) = parts.split_last().expect("non-empty key");
    let mut cur = table;
    for p in prefix {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Schema(format!("override '{key}': '{p}' is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Where the initial configuration of each replica comes from.
pub enum InitialSource {
    Law(ProductLaw),
    Fixed(ParticleState),
}

impl InitialSource {
    pub fn is_random(&self) -> bool {
        match self {
            InitialSource::Law(l) => !l.is_deterministic(),
            InitialSource::Fixed(_) => false,
        }
    }
}

impl ExperimentConfig {
    pub fn model(&self) -> Result<&ModelConfig, CliError> {
        self.model.as_ref().ok_or_else(|| CliError::Schema("missing [model] block".into()))
    }

    pub fn kernels(&self) -> Result<KernelSet, CliError> {
        let m = self.model()?;
        let ks = KernelSet::new(m.psi, m.sigma, m.noise.clone())?;
        if ks.dim() != m.d {
            return Err(CliError::Schema(format!("noise dimension {} does not match model.d = {}", ks.dim(), m.d)));
        }
        Ok(ks)
    }

    pub fn law(&self) -> Result<ProductLaw, CliError> {
        let m = self.model()?;
        let law = m.mu0.clone().ok_or_else(|| CliError::Schema("missing [model.mu0] block".into()))?;
        law.validate()?;
        if law.dim() != m.d {
            return Err(CliError::Schema(format!("mu0 dimension {} does not match model.d = {}", law.dim(), m.d)));
        }
        Ok(law)
    }

    pub fn initial_source(&self) -> Result<InitialSource, CliError> {
        let m = self.model()?;
        match (&m.initial, &m.mu0) {
            (Some(_), Some(_)) => Err(CliError::Schema("give either model.initial or model.mu0, not both".into())),
            (Some(init), None) => {
                let s = ParticleState::from_rows(0.0, &init.positions, &init.velocities)?;
                if s.n != m.n || s.d != m.d {
                    return Err(CliError::Schema(format!(
                        "model.initial has {} particles in dimension {}, expected n = {}, d = {}",
                        s.n, s.d, m.n, m.d
                    )));
                }
                Ok(InitialSource::Fixed(s))
            }
            (None, Some(_)) => Ok(InitialSource::Law(self.law()?)),
            (None, None) => Err(CliError::Schema("missing model.mu0 or model.initial".into())),
        }
    }

    pub fn t_end(&self) -> Result<f64, CliError> {
        self.run.t_end.ok_or_else(|| CliError::Schema("missing run.t_end".into()))
    }

    pub fn output_times(&self) -> Result<Vec<f64>, CliError> {
        let t_end = self.t_end()?;
        match &self.run.output_times {
            Some(t) if t.is_empty() => Err(CliError::Schema("run.output_times is empty".into())),
            Some(t) => Ok(t.clone()),
            None if self.run.output_steps == 0 => Err(CliError::Schema("run.output_steps must be >= 1".into())),
            None => Ok(SimConfig::uniform_grid(t_end, self.run.output_steps)),
        }
    }

    /// Seed of a task that draws random numbers.
    pub fn seed(&self) -> Result<u64, CliError> {
        self.run.seed.ok_or_else(|| CliError::Schema("run.seed is mandatory for stochastic tasks".into()))
    }

    pub fn sim_config(&self, output_times: Vec<f64>, seed: u64) -> Result<SimConfig, CliError> {
        let mut cfg = SimConfig::new(self.t_end()?, output_times, seed);
        cfg.truncation_m = self.run.truncation_m;
        cfg.exclude_diagonal = self.run.exclude_diagonal;
        cfg.record_jump_log = self.run.record_jump_log;
        cfg.validate_times()?;
        Ok(cfg)
    }

    pub fn observables(&self) -> Result<Vec<Observable>, CliError> {
        let d = self.model()?.d;
        let obs = self.run.observables.clone().unwrap_or_else(|| {
            let mut v = vec![Observable::VelocitySquare];
            v.extend((0..d).map(|axis| Observable::MeanVelocity { axis }));
            v
        });
        for o in &obs {
            if let Observable::MeanVelocity { axis } | Observable::MeanPosition { axis } = o {
                if *axis >= d {
                    return Err(CliError::Schema(format!("observable axis {axis} out of range for d = {d}")));
                }
            }
        }
        Ok(obs)
    }

    pub fn section<'a, T>(&self, s: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        s.as_ref().ok_or_else(|| CliError::Schema(format!("missing [{name}] block")))
    }
}
