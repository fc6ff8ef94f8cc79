use kc_cli::manifest::{RunManifest, MANIFEST_FILE};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn kc(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_kc"));
    c.args(args).env_remove("KC_WORKERS");
    for (k, v) in env {
        c.env(k, v);
    }
    c.output().expect("spawn kc")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const EVOLVE: &str = "experiment = evolve\nmu = 100\nlambda = 5\nphi0 = (+ 1 (* 0.5 vx (gauss 0.25)))\nphi0_bound = 2\nreplicas = 4\nt = 0.3\n";

#[test]
fn same_seed_reproduces_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "e.cfg", EVOLVE);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert!(kc(&["evolve", "--config", s(&cfg), "--seed", "9", "--workers", "1", "--out", s(&a)], &[]).status.success());
    assert!(kc(&["evolve", "--config", s(&cfg), "--seed", "9", "--workers", "2", "--out", s(&b)], &[]).status.success());
    assert!(kc(&["evolve", "--config", s(&cfg), "--seed", "10", "--out", s(&c)], &[]).status.success());
    let (ma, mb, mc) = (RunManifest::read(&a).unwrap(), RunManifest::read(&b).unwrap(), RunManifest::read(&c).unwrap());
    assert!(!ma.partial && ma.error.is_none());
    assert_eq!(ma.outputs, mb.outputs);
    assert_ne!(ma.outputs, mc.outputs);
    assert_eq!(ma.config_hash, mc.config_hash);
    assert!(ma.verify(&a).is_empty());
    assert_eq!(ma.replica_seeds.len(), 4);
    assert_eq!(ma.workers, 1);
    assert_eq!(mb.workers, 2);
}

#[test]
fn worker_variable_overrides_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "s.cfg", "mu = 100\nlambda = 5\nreplicas = 2\n");
    let out = dir.path().join("o");
    let r = kc(&["sample", "--config", s(&cfg), "--workers", "1", "--out", s(&out)], &[("KC_WORKERS", "3")]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert_eq!(RunManifest::read(&out).unwrap().workers, 3);
    let r = kc(&["sample", "--config", s(&cfg), "--out", s(&out)], &[("KC_WORKERS", "zero")]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn zero_replicas_is_a_config_error_with_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "e.cfg", &EVOLVE.replace("replicas = 4", "replicas = 0"));
    let out = dir.path().join("o");
    let r = kc(&["evolve", "--config", s(&cfg), "--out", s(&out)], &[]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("replicas"));
    let m = RunManifest::read(&out).unwrap();
    assert!(m.partial && m.error.is_some());
}

#[test]
fn collision_budget_overrun_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "e.cfg", &format!("{EVOLVE}max_events = 3\n"));
    let out = dir.path().join("o");
    let r = kc(&["evolve", "--config", s(&cfg), "--out", s(&out)], &[]);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
    let m = RunManifest::read(&out).unwrap();
    assert!(m.partial);
    assert!(m.verify(&out).is_empty());
}

#[test]
fn wall_clock_budget_overrun_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "l.cfg", "experiment = lln\nmu_list = 200, 400\nlambda = 10\nreplicas = 50\nt = 1\ntime_budget = 0.05\n");
    let out = dir.path().join("o");
    let r = kc(&["lln", "--config", s(&cfg), "--out", s(&out)], &[]);
    assert_eq!(r.status.code(), Some(3), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(RunManifest::read(&out).unwrap().partial);
}

#[test]
fn validate_reports_named_violations() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "g.cfg", "experiment = sample\nmu = 100\nlambda = 5\n");
    let r = kc(&["validate", "--config", s(&good)], &[]);
    assert!(r.status.success());
    assert_eq!(String::from_utf8_lossy(&r.stdout).trim(), "ok");

    let mixed = write(dir.path(), "m.cfg", "experiment = sample\nmu = 100\nepsilon = 0.2\nlambda = 5\n");
    let r = kc(&["validate", "--config", s(&mixed)], &[]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stdout).contains("mixed scaling"));

    let heavy = write(dir.path(), "h.cfg", "experiment = sample\nmu = 100\nlambda = 150\n");
    let r = kc(&["validate", "--config", s(&heavy)], &[]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stdout).contains("lambda"));

    let broken = write(dir.path(), "b.cfg", "experiment = sample\nmu = 100\nmu = 200\n");
    let r = kc(&["validate", "--config", s(&broken)], &[]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("line 3"));
}

#[test]
fn lln_emits_one_row_per_activity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "l.cfg",
        "experiment = lln\nmu_list = 50, 100, 200\nlambda_exponent = 0.6\nphi0 = (+ 1 (* 0.5 vx (gauss 0.25)))\nphi0_bound = 2\nobservables = vx\nreplicas = 5\nt = 0.2\ngrid = 15\n",
    );
    let out = dir.path().join("o");
    let r = kc(&["lln", "--config", s(&cfg), "--out", s(&out)], &[]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let mut rd = csv::Reader::from_path(out.join("lln.csv")).unwrap();
    let mu_col = rd.headers().unwrap().iter().position(|h| h == "mu").unwrap();
    let mus: Vec<f64> = rd.records().map(|r| r.unwrap()[mu_col].parse().unwrap()).collect();
    assert_eq!(mus, vec![50.0, 100.0, 200.0]);
    assert!(RunManifest::read(&out).unwrap().verify(&out).is_empty());
    assert!(out.join(MANIFEST_FILE).exists());
}

/// Numeric fields `n, mean, stderr, min, max` of summary row `row`.
fn fields(csv: &str, row: usize) -> Vec<f64> {
    csv.lines().nth(row).unwrap().split(',').skip(1).take(5).map(|x| x.parse().unwrap()).collect()
}

#[test]
fn aggregate_is_order_independent() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.csv", "x,y,label\n1,10,p\n");
    let b = write(dir.path(), "b.csv", "x,y,label\n2,20,q\n");
    let c = write(dir.path(), "c.csv", "x,y,label\n6,0.5,r\n");
    let one = kc(&["aggregate", s(&a)], &[]);
    assert!(one.status.success());
    let one = String::from_utf8(one.stdout).unwrap();
    assert_eq!(fields(&one, 1), vec![1.0, 1.0, 0.0, 1.0, 1.0]);
    assert!(one.lines().nth(1).unwrap().ends_with(",true"));
    let fwd = kc(&["aggregate", s(&a), s(&b), s(&c), "--stat", "mean"], &[]);
    let rev = kc(&["aggregate", s(&c), s(&a), s(&b)], &[]);
    assert_eq!(fwd.stdout, rev.stdout);
    let x = fields(&String::from_utf8(fwd.stdout).unwrap(), 1);
    assert_eq!(x[0], 3.0);
    assert!((x[1] - 3.0).abs() < 1e-12);
    assert!((x[2] - (7.0f64 / 3.0).sqrt()).abs() < 1e-12);
    let odd = write(dir.path(), "d.csv", "x,z\n1,2\n");
    assert_eq!(kc(&["aggregate", s(&a), s(&odd)], &[]).status.code(), Some(1));
    assert_eq!(kc(&["aggregate", s(&a), "--stat", "median"], &[]).status.code(), Some(1));
}
