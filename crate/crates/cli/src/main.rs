//! `flocksim`: experiment runner for the stochastic Cucker–Smale toolkit.

mod config;
mod error;
mod rundir;
mod tasks;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flocksim_core::Exec;

use crate::config::DistanceSpec;
use crate::error::CliError;
use crate::rundir::{RunDir, RunNotes};
use crate::tasks::TaskCtx;

#[derive(Parser)]
#[command(name = "flocksim", version, about = "Stochastic Cucker–Smale flocking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Jump-process particle ensemble.
    SimulateParticles(RunArgs),
    /// Deterministic Cucker–Smale ODE baseline.
    SimulateOde(RunArgs),
    /// Mean-field flow by Picard iteration of the linearised jump process.
    MeanfieldPicard(RunArgs),
    /// Mean-field flow by a large direct particle run.
    MeanfieldDirect(RunArgs),
    /// Propagation-of-chaos W1 study over N.
    ChaosStudy(RunArgs),
    /// Moments and distances of stored flows.
    Metrics(RunArgs),
    /// Envelope curves, optionally checked against an ensemble observable.
    VerifyBounds(RunArgs),
    /// Randomised certification of the moment inequalities.
    CertifyInequalities(RunArgs),
    /// Distances per time between the flows of two run directories.
    Compare(CompareArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override a config entry, e.g. `--set run.seed=7`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Run directory [default: flocksim-runs/<task>-<config stem>].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, env = "FLOCKSIM_JOBS")]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricChoice {
    W1,
    Tv,
    Both,
}

#[derive(Args)]
struct CompareArgs {
    run_a: PathBuf,
    run_b: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    metric: MetricChoice,
    /// Use the time-shifted transport metric for W1.
    #[arg(long)]
    shifted: bool,
    #[arg(long, default_value_t = 1024)]
    w1_max_size: usize,
    #[arg(long)]
    tv_bins: Option<usize>,
    /// Add the bounded-kernel TV envelope from run A's config, started at the measured TV.
    #[arg(long)]
    overlay_tv: bool,
    /// Output directory [default: flocksim-runs/compare].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "FLOCKSIM_JOBS")]
    jobs: Option<usize>,
}

fn with_jobs<T>(jobs: Option<usize>, f: impl FnOnce(Exec) -> T + Send) -> Result<T, CliError>
where
    T: Send,
{
    match jobs {
        Some(0) => Err(CliError::Schema("--jobs must be >= 1".into())),
        Some(1) => Ok(f(Exec::Sequential)),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Io(format!("cannot start worker pool: {e}")))?;
            Ok(pool.install(|| f(Exec::Parallel)))
        }
        None => Ok(f(Exec::Parallel)),
    }
}

fn default_out(task: &str, config: &Path) -> PathBuf {
    let stem = config.file_stem().and_then(|s| s.to_str()).unwrap_or("config");
    PathBuf::from("flocksim-runs").join(format!("{task}-{stem}"))
}

fn run(task: &str, args: &RunArgs) -> Result<String, CliError> {
    let loaded = config::load(&args.config, &args.set)?;
    if let Some(tag) = &loaded.cfg.task {
        if tag != task {
            return Err(CliError::Schema(format!("config declares task '{tag}' but '{task}' was requested")));
        }
    }
    let out = args.out.clone().unwrap_or_else(|| default_out(task, &args.config));
    let mut dir = RunDir::create(&out)?;
    let snapshot = toml::to_string(&loaded.table).map_err(|e| CliError::Io(format!("cannot render config: {e}")))?;
    dir.write("config.toml", snapshot.as_bytes())?;
    let mut notes = RunNotes::default();
    let ctx_cfg = &loaded.cfg;
    let base = loaded.base_dir.as_path();
    with_jobs(args.jobs, |exec| {
        let ctx = TaskCtx { cfg: ctx_cfg, base_dir: base, exec };
        tasks::run_task(task, &ctx, &mut dir, &mut notes)
    })??;
    let hash = dir.finish(task, &notes)?;
    println!("{}", out.display());
    Ok(hash)
}

fn compare(args: &CompareArgs) -> Result<String, CliError> {
    let a = tasks::load_flow(&args.run_a)?;
    let b = tasks::load_flow(&args.run_b)?;
    let spec = DistanceSpec {
        w1: matches!(args.metric, MetricChoice::W1 | MetricChoice::Both),
        tv: matches!(args.metric, MetricChoice::Tv | MetricChoice::Both) || args.overlay_tv,
        shifted: args.shifted,
        w1_max_size: args.w1_max_size,
        tv_bins: args.tv_bins,
    };
    let mut records = with_jobs(args.jobs, |_| tasks::distance_records(&a, &b, &spec))??;
    if args.overlay_tv {
        let loaded = config::load(&args.run_a.join("config.toml"), &[])?;
        tasks::tv_overlay(&loaded.cfg, &mut records)?;
    }
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("flocksim-runs").join("compare"));
    let mut dir = RunDir::create(&out)?;
    dir.write_jsonl("compare.jsonl", &records)?;
    let mut notes = RunNotes::default();
    notes.note("run_a", args.run_a.display().to_string());
    notes.note("run_b", args.run_b.display().to_string());
    let hash = dir.finish("compare", &notes)?;
    println!("{}", out.display());
    Ok(hash)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::SimulateParticles(a) => run("simulate-particles", a),
        Command::SimulateOde(a) => run("simulate-ode", a),
        Command::MeanfieldPicard(a) => run("meanfield-picard", a),
        Command::MeanfieldDirect(a) => run("meanfield-direct", a),
        Command::ChaosStudy(a) => run("chaos-study", a),
        Command::Metrics(a) => run("metrics", a),
        Command::VerifyBounds(a) => run("verify-bounds", a),
        Command::CertifyInequalities(a) => run("certify-inequalities", a),
        Command::Compare(a) => compare(a),
    };
    match result {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("flocksim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
