//! End-to-end checks of the `flocksim` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const PARTICLES: &str = r#"
task = "simulate-particles"

[model]
n = 6
d = 2
psi = { family = "rational", coef = 1.0, exponent = 1.0 }
sigma = { family = "constant", c = 1.0 }
noise = { family = "gaussian", std = [0.5, 0.5] }

[model.mu0]
position = { family = "gaussian", mean = [0.0, 0.0], std = [1.0, 1.0] }
velocity = { family = "uniform_box", lo = [-1.0, -1.0], hi = [1.0, 1.0] }

[run]
t_end = 1.0
output_steps = 4
seed = 99
replicas = 40
record_jump_log = true
"#;

const ODE: &str = r#"
task = "simulate-ode"

[model]
n = 2
d = 1
psi = { family = "rational", coef = 1.0, exponent = 1.0 }
sigma = { family = "constant", c = 1.0 }
noise = { family = "degenerate_zero", dim = 1 }

[model.initial]
positions = [[0.0], [1.0]]
velocities = [[0.5], [0.5]]

[run]
t_end = 3.0
output_steps = 6
dt = 0.01
"#;

const DIRECT: &str = r#"
[model]
n = 1
d = 1
psi = { family = "constant", c = 1.0 }
sigma = { family = "constant", c = 1.0 }
noise = { family = "gaussian", std = [0.5] }

[model.mu0]
position = { family = "uniform_box", lo = [0.0], hi = [1.0] }
velocity = { family = "gaussian", mean = [0.0], std = [1.0] }

[run]
t_end = 0.5
output_steps = 2
seed = 7

[meanfield]
m = 200
grid_steps = 10
w1_max_size = 200
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_flocksim"));
    c.env_remove("FLOCKSIM_JOBS");
    c
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(task: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    bin().arg(task).arg("--config").arg(config).arg("--out").arg(out).args(extra).output().unwrap()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    (header, rows)
}

fn jsonl(path: &Path) -> Vec<Value> {
    fs::read_to_string(path).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "status {:?}\nstderr: {}", o.status, String::from_utf8_lossy(&o.stderr));
}

#[test]
fn consensus_ode_has_zero_velocity_spread() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "ode.toml", ODE);
    let out = tmp.path().join("run");
    assert_ok(&run("simulate-ode", &cfg, &out, &[]));
    let (header, rows) = csv_rows(&out.join("diagnostics.csv"));
    assert_eq!(header, ["t", "velocity_spread", "position_spread"]);
    assert_eq!(rows.len(), 7);
    assert!(rows.iter().all(|r| r[1] == 0.0));
    // rigid translation keeps the position spread at its initial 0.5
    assert!(rows.iter().all(|r| (r[2] - 0.5).abs() < 1e-12));
}

#[test]
fn single_particle_with_zero_rate_is_free_transport() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "p.toml", PARTICLES);
    let out = tmp.path().join("run");
    let o = run("simulate-particles", &cfg, &out, &["--set", "model.n=1", "--set", "model.sigma.c=0.0", "--set", "run.replicas=1"]);
    assert_ok(&o);
    let (_, rows) = csv_rows(&out.join("trajectory.csv"));
    let first = &rows[0];
    for r in &rows {
        let t = r[0];
        assert_eq!(&r[4..6], &first[4..6], "velocity changed at t = {t}");
        for a in 0..2 {
            assert!((r[2 + a] - (first[2 + a] + t * first[4 + a])).abs() <= 1e-12);
        }
    }
    assert_eq!(manifest(&out)["summary"]["accepted"], 0);
}

#[test]
fn rerun_is_bitwise_identical_across_job_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "p.toml", PARTICLES);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    assert_ok(&run("simulate-particles", &cfg, &a, &["--jobs", "1"]));
    assert_ok(&run("simulate-particles", &cfg, &b, &["--jobs", "3"]));
    assert_ok(&run("simulate-particles", &cfg, &c, &["--set", "run.seed=100"]));
    let (ma, mb, mc) = (manifest(&a), manifest(&b), manifest(&c));
    assert_eq!(ma["outputs_hash"], mb["outputs_hash"]);
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
    assert_ne!(ma["artifacts"]["ensemble.csv"], mc["artifacts"]["ensemble.csv"]);
    assert_eq!(ma["seed"], 99);
    for name in ["config.toml", "trajectory.csv", "jump_log.csv", "ensemble.csv"] {
        assert!(a.join(name).exists(), "{name} missing");
    }
}

#[test]
fn config_snapshot_replays_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "p.toml", PARTICLES);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_ok(&run("simulate-particles", &cfg, &a, &["--set", "run.seed=5", "--set", "run.replicas=10"]));
    assert_ok(&run("simulate-particles", &a.join("config.toml"), &b, &[]));
    assert_eq!(manifest(&a)["outputs_hash"], manifest(&b)["outputs_hash"]);
}

#[test]
fn jobs_env_var_is_the_default() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "p.toml", PARTICLES);
    let o = bin()
        .env("FLOCKSIM_JOBS", "0")
        .args(["simulate-particles", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("r"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compare_of_a_run_with_itself_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "d.toml", DIRECT);
    let a = tmp.path().join("a");
    assert_ok(&run("meanfield-direct", &cfg, &a, &[]));
    let out = tmp.path().join("cmp");
    let o = bin().arg("compare").arg(&a).arg(&a).arg("--out").arg(&out).output().unwrap();
    assert_ok(&o);
    let recs = jsonl(&out.join("compare.jsonl"));
    assert_eq!(recs.len(), 6);
    assert!(recs.iter().all(|r| r["value"] == 0.0), "{recs:?}");
}

#[test]
fn tv_overlay_starts_at_the_measured_distance() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "d.toml", DIRECT);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_ok(&run("meanfield-direct", &cfg, &a, &[]));
    assert_ok(&run("meanfield-direct", &cfg, &b, &["--set", "run.seed=8"]));
    let out = tmp.path().join("cmp");
    let o = bin().arg("compare").arg(&a).arg(&b).args(["--metric", "tv", "--overlay-tv", "--out"]).arg(&out).output().unwrap();
    assert_ok(&o);
    let recs = jsonl(&out.join("compare.jsonl"));
    assert!(recs[0]["value"].as_f64().unwrap() > 0.0);
    assert_eq!(recs[0]["envelope"], recs[0]["value"]);
    for r in &recs {
        assert!(r["envelope"].as_f64().unwrap() >= r["value"].as_f64().unwrap());
    }
}

#[test]
fn picard_non_convergence_exits_zero_with_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "d.toml", DIRECT);
    let out = tmp.path().join("run");
    let o = run("meanfield-picard", &cfg, &out, &["--set", "meanfield.max_iter=1", "--set", "meanfield.tol=1e-9"]);
    assert_ok(&o);
    let m = manifest(&out);
    assert_eq!(m["converged"], false);
    assert_eq!(m["warnings"].as_array().unwrap().len(), 1);
    assert_eq!(jsonl(&out.join("picard.jsonl")).len(), 1);
}

#[test]
fn certification_report_has_one_line_per_lemma() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", "[run]\nseed = 1\n\n[certify]\nsamples = 300\n");
    let out = tmp.path().join("run");
    assert_ok(&run("certify-inequalities", &cfg, &out, &[]));
    let recs = jsonl(&out.join("certification.jsonl"));
    assert_eq!(recs.len(), 5);
    for r in &recs {
        assert_eq!(r["violations"], 0, "{r}");
        for key in ["lemma", "samples", "max_margin", "calibrated_C"] {
            assert!(r.get(key).is_some(), "missing {key}");
        }
    }
}

#[test]
fn verify_bounds_writes_envelope_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "[run]\nt_end = 0.5\noutput_steps = 4\n\n[[bounds.envelopes]]\nfamily = \"osgood\"\nrho0 = 0.36787944117144233\nc = 1.0\n";
    let cfg = write_config(tmp.path(), "b.toml", text);
    let out = tmp.path().join("run");
    assert_ok(&run("verify-bounds", &cfg, &out, &[]));
    let (header, rows) = csv_rows(&out.join("envelope_0_osgood.csv"));
    assert_eq!(header, ["t", "bound"]);
    assert_eq!(rows.len(), 5);
    // closed form exp(1 − 2e^{−t}) before the exit time ln 2
    assert!((rows[4][1] - (1.0 - 2.0 * (-0.5f64).exp()).exp()).abs() < 1e-12);
}

#[test]
fn metrics_task_reads_run_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "d.toml", DIRECT);
    assert_ok(&run("meanfield-direct", &cfg, &tmp.path().join("a"), &[]));
    let mcfg = write_config(tmp.path(), "m.toml", "[metrics]\nflow = \"a\"\nflow_b = \"a\"\nmoments = [2.0]\n");
    let out = tmp.path().join("m");
    assert_ok(&run("metrics", &mcfg, &out, &[]));
    let recs = jsonl(&out.join("metrics.jsonl"));
    let moments: Vec<&Value> = recs.iter().filter(|r| r["metric"] == "moment").collect();
    assert_eq!(moments.len(), 3);
    assert!(recs.iter().filter(|r| r["metric"] == "w1" || r["metric"] == "tv").all(|r| r["value"] == 0.0));
}

#[test]
fn schema_violations_exit_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "p.toml", PARTICLES);
    let cases: Vec<(&str, Vec<&str>)> = vec![
        ("simulate-particles", vec!["--set", "run.bogus=1"]),
        ("simulate-particles", vec!["--set", "model.psi.family=nope"]),
        ("simulate-particles", vec!["--set", "model.d=3"]),
        ("simulate-particles", vec!["--set", "run.seed=\"\""]),
        ("simulate-particles", vec!["--set", "model.sigma={family=\"bracket_power\", c_sigma=1.0, gamma=1.0}"]),
        ("simulate-ode", vec![]),
        ("simulate-particles", vec!["--set", "novalue"]),
        ("simulate-particles", vec!["--jobs", "0"]),
    ];
    for (task, extra) in cases {
        let o = run(task, &cfg, &tmp.path().join("r"), &extra);
        assert_eq!(o.status.code(), Some(2), "{task} {extra:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let no_seed = write_config(tmp.path(), "ns.toml", &PARTICLES.replace("seed = 99\n", ""));
    let o = run("simulate-particles", &no_seed, &tmp.path().join("r"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
    let o = bin().args(["simulate-particles", "--bogus-flag"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn overflow_is_a_numerical_abort() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "ode.toml", ODE);
    let o = run("simulate-ode", &cfg, &tmp.path().join("r"), &["--set", "model.initial.velocities=[[1e308], [-1e308]]"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
