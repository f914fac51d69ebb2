//! Task runners. Each reads the validated config, writes artifacts into the
//! run directory and records manifest facts in [`RunNotes`].

use std::io::Write;
use std::path::{Path, PathBuf};

use flocksim_core::bounds::BoundEnvelope;
use flocksim_core::ineq_oracle::{certify, CertifyConfig, SampleSpec};
use flocksim_core::io::{read_flow_csv, read_trajectory_csv, write_envelope_csv, write_flow_csv, write_jump_log_csv, write_trajectory_csv};
use flocksim_core::meanfield::{chaos_study, direct_mckean, picard_iterate, ChaosConfig, PicardConfig};
use flocksim_core::metrics::{exp_moment, mean_velocity, moment_q, second_moment, tv_histogram_detailed, w1_exact_with, GridSpec, W1Options};
use flocksim_core::ode_baseline::{flocking_diagnostics, integrate_at};
use flocksim_core::particle_system::{simulate_with_rng, Observable, Trajectory};
use flocksim_core::rng::replica_rng;
use flocksim_core::{Exec, KernelSet, MarginalFlow, SimConfig};
use serde_json::{json, Value};

use crate::config::{DistanceSpec, ExperimentConfig, InitialSource};
use crate::error::CliError;
use crate::rundir::{RunDir, RunNotes};

pub struct TaskCtx<'a> {
    pub cfg: &'a ExperimentConfig,
    pub base_dir: &'a Path,
    pub exec: Exec,
}

pub fn run_task(task: &str, ctx: &TaskCtx, dir: &mut RunDir, notes: &mut RunNotes) -> Result<(), CliError> {
    match task {
        "simulate-particles" => simulate_particles(ctx, dir, notes),
        "simulate-ode" => simulate_ode(ctx, dir, notes),
        "meanfield-direct" => meanfield_direct(ctx, dir, notes),
        "meanfield-picard" => meanfield_picard(ctx, dir, notes),
        "chaos-study" => chaos(ctx, dir, notes),
        "metrics" => metrics(ctx, dir, notes),
        "verify-bounds" => verify_bounds(ctx, dir, notes),
        "certify-inequalities" => certify_inequalities(ctx, dir, notes),
        other => Err(CliError::Schema(format!("unknown task '{other}'"))),
    }
}

fn num(x: f64) -> String {
    x.to_string()
}

fn csv_line(out: &mut Vec<u8>, fields: &[String]) -> Result<(), CliError> {
    writeln!(out, "{}", fields.join(","))?;
    Ok(())
}

/// Per-observable means and standard errors over replicas, plus replica 0.
struct ReplicaRun {
    first: Trajectory,
    mean: Vec<Vec<f64>>,
    std_error: Vec<Vec<f64>>,
    frozen: usize,
    proposals: u64,
    accepted: u64,
}

fn run_replicas(
    ks: &KernelSet,
    src: &InitialSource,
    n: usize,
    replicas: usize,
    sim: &SimConfig,
    obs: &[Observable],
    exec: Exec,
) -> Result<ReplicaRun, CliError> {
    if replicas == 0 {
        return Err(CliError::Schema("run.replicas must be >= 1".into()));
    }
    sim.validate(ks)?;
    let mut runs = exec.try_map(replicas, |i| {
        let mut rng = replica_rng(sim.seed, i as u64);
        let s0 = match src {
            InitialSource::Law(l) => l.sample_state(n, &mut rng),
            InitialSource::Fixed(s) => s.clone(),
        };
        let traj = simulate_with_rng(ks, &s0, sim, &mut rng)?;
        let values: Vec<Vec<f64>> = obs.iter().map(|o| traj.states.iter().map(|s| o.eval(s)).collect()).collect();
        let stats = (traj.truncation_frozen, traj.proposals, traj.accepted);
        Ok::<_, flocksim_core::Error>((if i == 0 { Some(traj) } else { None }, values, stats))
    })?;
    let nt = sim.output_times.len();
    let r = replicas as f64;
    let mut mean = vec![vec![0.0; nt]; obs.len()];
    let mut std_error = vec![vec![0.0; nt]; obs.len()];
    for o in 0..obs.len() {
        for t in 0..nt {
            let m = runs.iter().map(|x| x.1[o][t]).sum::<f64>() / r;
            mean[o][t] = m;
            if replicas > 1 {
                let var = runs.iter().map(|x| (x.1[o][t] - m).powi(2)).sum::<f64>() / (r - 1.0);
                std_error[o][t] = (var / r).sqrt();
            }
        }
    }
    let frozen = runs.iter().filter(|x| x.2 .0).count();
    let proposals = runs.iter().map(|x| x.2 .1).sum();
    let accepted = runs.iter().map(|x| x.2 .2).sum();
    let first = runs[0].0.take().expect("replica 0 keeps its trajectory");
    Ok(ReplicaRun { first, mean, std_error, frozen, proposals, accepted })
}

fn simulate_particles(ctx: &TaskCtx, dir: &mut RunDir, notes: &mut RunNotes) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let ks = cfg.kernels()?;
    let src = cfg.initial_source()?;
    let seed = cfg.seed()?;
    notes.seed = Some(seed);
    let sim = cfg.sim_config(cfg.output_times()?, seed)?;
    let obs = cfg.observables()?;
    let run = run_replicas(&ks, &src, cfg.model()?.n, cfg.run.replicas, &sim, &obs, ctx.exec)?;

    dir.write_with("trajectory.csv", |b| Ok(write_trajectory_csv(b, &run.first.states)?))?;
    if sim.record_jump_log {
        dir.write_with("jump_log.csv", |b| Ok(write_jump_log_csv(b, ks.dim(), &run.first.jump_log)?))?;
    }
    dir.write_with("ensemble.csv", |b| {
        let mut header = vec!["t".to_string()];
        for o in &obs {
            header.push(format!("{}_mean", o.name()));
            header.push(format!("{}_se", o.name()));
        }
        csv_line(b, &header)?;
        for (ti, t) in sim.output_times.iter().enumerate() {
            let mut row = vec![num(*t)];
            for o in 0..obs.len() {
                row.push(num(run.mean[o][ti]));
                row.push(num(run.std_error[o][ti]));
            }
            csv_line(b, &row)?;
        }
        Ok(())
    })?;
    notes.note("replicas", cfg.run.replicas);
    notes.note("proposals", run.proposals);
    notes.note("accepted", run.accepted);
    notes.note("truncation_frozen_replicas", run.frozen);
    Ok(())
}

fn simulate_ode(ctx: &TaskCtx, dir: &mut RunDir, notes: &mut RunNotes) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let model = cfg.model()?;
    model.psi.validate()?;
    let src = cfg.initial_source()?;
    let s0 = match &src {
        InitialSource::Fixed(s) => s.clone(),
        InitialSource::Law(l) => {
            let seed = if src.is_random() { cfg.seed()? } else { cfg.run.seed.unwrap_or(0) };
            notes.seed = src.is_random().then_some(seed);
            l.sample_state(model.n, &mut replica_rng(seed, 0))
        }
    };
    let times = cfg.output_times()?;
    SimConfig::new(cfg.t_end()?, times.clone(), 0).validate_times()?;
    if !(cfg.run.dt.is_finite() && cfg.run.dt > 0.0) {
        return Err(CliError::Schema(format!("run.dt must be > 0, got {}", cfg.run.dt)));
    }
    let traj = integrate_at(&model.psi, &s0, &times, cfg.run.dt)?;
    let diag = flocking_diagnostics(&traj.states)?;
    dir.write_with("trajectory.csv", |b| Ok(write_trajectory_csv(b, &traj.states)?))?;
    dir.write_with("diagnostics.csv", |b| {
        csv_line(b, &["t".into(), "velocity_spread".into(), "position_spread".into()])?;
        for d in &diag {
            csv_line(b, &[num(d.t), num(d.velocity_spread), num(d.position_spread)])?;
        }
        Ok(())
    })?;
    notes.note("dt", cfg.run.dt);
    Ok(())
}

fn write_moments(dir: &mut RunDir, flow: &MarginalFlow) -> Result<(), CliError> {
    let d = flow.dim();
    dir.write_with("moments.csv", |b| {
        let mut header = vec!["t".to_string(), "second_moment".to_string()];
        header.extend((0..d).map(|a| format!("mean_velocity_{a}")));
        csv_line(b, &header)?;
        for (t, m) in flow.times.iter().zip(&flow.measures) {
            let mut row = vec![num(*t), num(second_moment(m))];
            row.extend(mean_velocity(m).into_iter().map(num));
            csv_line(b, &row)?;
        }
        Ok(())
    })
}

fn meanfield_direct(ctx: &TaskCtx, dir: &mut RunDir, notes: &mut RunNotes) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let mf = cfg.section(&cfg.meanfield, "meanfield")?;
    let ks = cfg.kernels()?;
    let law = cfg.law()?;
    let seed = cfg.seed()?;
    notes.seed = Some(seed);
    let sim = cfg.sim_config(cfg.output_times()?, seed)?;
    let (flow, traj) = direct_mckean(&ks, &law, mf.m, &sim)?;
    dir.write_with("flow.csv", |b| Ok(write_flow_csv(b, &flow)?))?;
    write_moments(dir, &flow)?;
    notes.note("m", mf.m);
    notes.note("proposals", traj.proposals);
    notes.note("accepted", traj.accepted);
    notes.note("truncation_frozen", traj.truncation_frozen);
    Ok(())
}

/// Grid index equal to `t` up to rounding, if any.
fn grid_index(grid: &[f64], t: f64) -> Option<usize> {
    grid.iter().position(|g| (g - t).abs() <= 1e-9 * t.abs().max(1.0))
}

fn meanfield_picard(ctx: &TaskCtx, dir: &mut RunDir, notes: &mut RunNotes) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let mf = cfg.section(&cfg.meanfield, "meanfield")?;
    let ks = cfg.kernels()?;
    let law = cfg.law()?;
    let seed = cfg.seed()?;
    notes.seed = Some(seed);
    if mf.grid_steps == 0 {
        return Err(CliError::Schema("meanfield.grid_steps must be >= 1".into()));
    }
    let grid = SimConfig::uniform_grid(cfg.t_end()?, mf.grid_steps);
    let snap = |ts: &[f64], what: &str| -> Result<Vec<usize>, CliError> {
        ts.iter()
            .map(|t| grid_index(&grid, *t).ok_or_else(|| CliError::Schema(format!("{what} {t} is not on the Picard grid"))))
            .collect()
    };
    let check_idx = match &mf.check_times {
        Some(ts) => snap(ts, "meanfield.check_times entry")?,
        None => {
            let mut v: Vec<usize> = (1..=10).map(|k| (k * mf.grid_steps).div_ceil(10)).collect();
            v.dedup();
            v
        }
    };
    let out_idx = snap(&cfg.output_times()?, "output time")?;
    let sim = cfg.sim_config(grid.clone(), seed)?;
    let picard = PicardConfig {
        max_iter: mf.max_iter,
        tol: mf.tol,
        check_times: check_idx.iter().map(|&i| grid[i]).collect(),
        w1: W1Options { max_size: mf.w1_max_size, ..W1Options::default() },
    };
    let (flow, report) = picard_iterate(&ks, &law, mf.m, &sim, &picard, ctx.exec)?;
    let out = MarginalFlow::new(
        out_idx.iter().map(|&i| flow.times[i]).collect(),
        out_idx.iter().map(|&i| flow.measures[i].clone()).collect(),
    )?;
    dir.write_with("flow.csv", |b| Ok(write_flow_csv(b, &out)?))?;
    write_moments(dir, &out)?;
    let records: Vec<Value> = report
        .discrepancies
        .iter()
        .enumerate()
        .map(|(k, d)| json!({ "iteration": k + 1, "discrepancy": d, "tol": mf.tol }))
        .collect();
    dir.write_jsonl("picard.jsonl", &records)?;
    notes.converged = Some(report.converged);
    if !report.converged {
        notes.warn(format!("Picard iteration did not reach tol {} within {} iterations", mf.tol, mf.max_iter));
    }
    notes.note("m", mf.m);
    notes.note("iterations", report.iterations);
    notes.note("monotone_after_second", report.monotone_after_second());
    Ok(())
}

fn chaos(ctx: &TaskCtx, dir: &mut RunDir, notes: &mut RunNotes) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let ch = cfg.section(&cfg.chaos, "chaos")?;
    let ks = cfg.kernels()?;
    let law = cfg.law()?;
    let seed = cfg.seed()?;
    notes.seed = Some(seed);
    let sim = cfg.sim_config(cfg.output_times()?, seed)?;
    let chaos_cfg = ChaosConfig {
        n_list: ch.n_list.clone(),
        m_ref: ch.m_ref,
        replicas: ch.replicas,
        bootstrap: ch.bootstrap,
        w1_samples: ch.w1_samples,
    };
    let report = chaos_study(&ks, &law, &sim, &chaos_cfg, ctx.exec)?;
    dir.write_with("chaos.csv", |b| {
        csv_line(b, &["series".into(), "n".into(), "t".into(), "w1".into(), "std_error".into()])?;
        for (series, rows) in [("tagged", &report.rows), ("noise_floor", &report.noise_floor)] {
            for r in rows {
                csv_line(b, &[series.into(), r.n.to_string(), num(r.t), num(r.w1), num(r.std_error)])?;
            }
        }
        Ok(())
    })?;
    notes.note("m_ref", ch.m_ref);
    notes.note("replicas", ch.replicas);
    Ok(())
}

/// Reads `flow.csv` or `trajectory.csv` from a run directory, or a CSV file of
/// either schema.
pub fn load_flow(path: &Path) -> Result<MarginalFlow, CliError> {
    let file = if path.is_dir() {
        let f = path.join("flow.csv");
        if f.exists() {
            f
        } else {
            path.join("trajectory.csv")
        }
    } else {
        path.to_path_buf()
    };
    let text = std::fs::read(&file).map_err(|e| CliError::Io(format!("cannot read {}: {e}", file.display())))?;
    let header = text.split(|b| *b == b'\n').next().unwrap_or_default();
    if header.starts_with(b"t,sample_id") {
        Ok(read_flow_csv(text.as_slice())?)
    } else if header.starts_with(b"t,particle_id") {
        Ok(MarginalFlow::from_states(&read_trajectory_csv(text.as_slice())?)?)
    } else {
        Err(CliError::Schema(format!("{} is neither a flow nor a trajectory CSV", file.display())))
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// `{metric, t, value, estimator_metadata}` records between two flows on the
/// same time grid.
pub fn distance_records(a: &MarginalFlow, b: &MarginalFlow, spec: &DistanceSpec) -> Result<Vec<Value>, CliError> {
    let same_grid =
        a.times.len() == b.times.len() && a.times.iter().zip(&b.times).all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs().max(1.0));
    if !same_grid {
        return Err(CliError::Schema(format!("incompatible time grids: {:?} vs {:?}", a.times, b.times)));
    }
    if a.dim() != b.dim() {
        return Err(CliError::Schema(format!("dimension mismatch: {} vs {}", a.dim(), b.dim())));
    }
    let mut out = Vec::new();
    for (i, &t) in a.times.iter().enumerate() {
        let (ma, mb) = (&a.measures[i], &b.measures[i]);
        if spec.w1 {
            let shift = if spec.shifted { t } else { 0.0 };
            let opts = W1Options { max_size: spec.w1_max_size, ..W1Options::default() };
            let w = w1_exact_with(ma, mb, shift, &opts)?;
            out.push(json!({
                "metric": "w1", "t": t, "value": w.value,
                "estimator_metadata": { "samples": w.samples, "resampled": w.resampled, "shift": shift },
            }));
        }
        if spec.tv {
            let grid = match spec.tv_bins {
                Some(bins) => GridSpec::pooled_with_bins(ma, mb, bins)?,
                None => GridSpec::pooled(ma, mb)?,
            };
            let tv = tv_histogram_detailed(ma, mb, &grid)?;
            out.push(json!({
                "metric": "tv", "t": t, "value": tv.value,
                "estimator_metadata": {
                    "bins_per_axis": tv.bins_per_axis, "occupied_bins": tv.occupied_bins, "normalization": tv.normalization,
                },
            }));
        }
    }
    Ok(out)
}

fn metrics(ctx: &TaskCtx, dir: &mut RunDir, notes: &mut RunNotes) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let ms = cfg.section(&cfg.metrics, "metrics")?;
    let a = load_flow(&resolve(ctx.base_dir, &ms.flow))?;
    let mut records = Vec::new();
    for (t, m) in a.times.iter().zip(&a.measures) {
        for &q in &ms.moments {
            records.push(json!({
                "metric": "moment", "t": t, "value": moment_q(m, q)?,
                "estimator_metadata": { "q": q, "samples": m.len() },
            }));
        }
        if let Some(e) = ms.exp_moment {
            records.push(json!({
                "metric": "exp_moment", "t": t, "value": exp_moment(m, e.delta, e.kappa)?,
                "estimator_metadata": { "delta": e.delta, "kappa": e.kappa, "samples": m.len() },
            }));
        }
        records.push(json!({
            "metric": "mean_velocity", "t": t, "value": mean_velocity(m),
            "estimator_metadata": { "samples": m.len() },
        }));
    }
    if let Some(pb) = &ms.flow_b {
        let b = load_flow(&resolve(ctx.base_dir, pb))?;
        records.extend(distance_records(&a, &b, &ms.distances)?);
    }
    dir.write_jsonl("metrics.jsonl", &records)?;
    notes.note("records", records.len());
    Ok(())
}

fn verify_bounds(ctx: &TaskCtx, dir: &mut RunDir, notes: &mut RunNotes) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let bs = cfg.section(&cfg.bounds, "bounds")?;
    if bs.envelopes.is_empty() {
        return Err(CliError::Schema("bounds.envelopes is empty".into()));
    }
    let measured = match &bs.check {
        Some(obs) => {
            if bs.times.is_some() {
                return Err(CliError::Schema("bounds.times cannot be combined with bounds.check; use run.output_times".into()));
            }
            let ks = cfg.kernels()?;
            let src = cfg.initial_source()?;
            let seed = cfg.seed()?;
            notes.seed = Some(seed);
            let sim = cfg.sim_config(cfg.output_times()?, seed)?;
            let run = run_replicas(&ks, &src, cfg.model()?.n, cfg.run.replicas, &sim, &[*obs], ctx.exec)?;
            notes.note("observable", obs.name());
            notes.note("truncation_frozen_replicas", run.frozen);
            let mean = run.mean.into_iter().next().expect("one observable");
            let se = run.std_error.into_iter().next().expect("one observable");
            Some((sim.output_times, mean, se))
        }
        None => None,
    };
    let times = match (&measured, &bs.times) {
        (Some((t, _, _)), _) => t.clone(),
        (None, Some(t)) => t.clone(),
        (None, None) => cfg.output_times()?,
    };
    let mut summary = Vec::new();
    let mut violations = 0usize;
    for (i, env) in bs.envelopes.iter().enumerate() {
        let curve = env.curve(&times)?;
        dir.write_with(&format!("envelope_{i}_{}.csv", env.name()), |b| Ok(write_envelope_csv(b, &curve)?))?;
        for (k, (t, bound)) in curve.iter().enumerate() {
            let mut rec = json!({ "envelope": i, "family": env.name(), "t": t, "bound": bound });
            if let Some((_, mean, se)) = &measured {
                let holds = mean[k] <= *bound;
                violations += usize::from(!holds);
                rec["measured"] = json!(mean[k]);
                rec["std_error"] = json!(se[k]);
                rec["holds"] = json!(holds);
            }
            summary.push(rec);
        }
    }
    dir.write_jsonl("bounds.jsonl", &summary)?;
    notes.note("envelopes", bs.envelopes.len());
    if measured.is_some() {
        notes.note("violations", violations);
        if violations > 0 {
            notes.warn(format!("{violations} envelope evaluations fall below the measured mean"));
        }
    }
    Ok(())
}

fn certify_inequalities(ctx: &TaskCtx, dir: &mut RunDir, notes: &mut RunNotes) -> Result<(), CliError> {
    let cfg = ctx.cfg;
    let cs = cfg.section(&cfg.certify, "certify")?;
    let seed = cfg.seed()?;
    notes.seed = Some(seed);
    let mut records = Vec::new();
    let mut violations = 0usize;
    for &lemma in &cs.lemmas {
        for &p in &cs.p {
            for &gamma in &cs.gamma {
                let mut cc = CertifyConfig::new(lemma, SampleSpec::new(p, gamma), cs.samples, seed);
                cc.calibration_factor = cs.calibration_factor;
                cc.delta = cs.delta;
                cc.kappa = cs.kappa;
                let r = certify(&cc, ctx.exec)?;
                violations += r.violations;
                records.push(json!({
                    "lemma": lemma.name(), "p": p, "gamma": gamma, "samples": r.samples,
                    "violations": r.violations, "max_margin": r.max_margin, "calibrated_C": r.calibrated_c,
                }));
            }
        }
    }
    dir.write_jsonl("certification.jsonl", &records)?;
    notes.note("violations", violations);
    if violations > 0 {
        notes.warn(format!("{violations} certification samples violate their inequality"));
    }
    Ok(())
}

/// TV envelope overlay for `compare`: the bounded-kernel estimate started
/// from the measured TV at the first common time.
pub fn tv_overlay(cfg: &ExperimentConfig, records: &mut [Value]) -> Result<(), CliError> {
    let ks = cfg.kernels()?;
    let sigma_max = ks
        .sigma
        .sup()
        .ok_or_else(|| CliError::Schema("TV overlay needs a bounded velocity kernel".into()))?;
    let first = records
        .iter()
        .filter(|r| r["metric"] == "tv")
        .map(|r| (r["t"].as_f64().unwrap_or(0.0), r["value"].as_f64().unwrap_or(0.0)))
        .next()
        .ok_or_else(|| CliError::Schema("TV overlay needs the tv metric".into()))?;
    let env = BoundEnvelope::TvBounded { tv0: first.1, psi_max: ks.psi.sup(), sigma_max, cap: Some(2.0) };
    for r in records.iter_mut().filter(|r| r["metric"] == "tv") {
        let t = r["t"].as_f64().unwrap_or(0.0);
        r["envelope"] = json!(env.eval(t - first.0)?);
    }
    Ok(())
}
