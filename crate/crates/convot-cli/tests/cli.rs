//! End-to-end tests of the `convot` binary: round trips between subcommand
//! outputs, deterministic reruns, exit codes, and help-text golden files.

use std::path::Path;
use std::process::{Command, Output};

use convot::config::{parse_spec, read_csv_matrix, KeyValues};

const SPEC: &str = "clusters = 1,2\ndof = 4,8\nmu = 0.1,0.2,0.3\n\
                    xi = 0.6,0.3,0.1;0.5,0.7,0.2;0.4,0.2,0.8\nstandardized = false\n";

fn convot(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_convot"))
        .args(args)
        .current_dir(dir)
        .env_remove("CONVOT_WORKERS")
        .output()
        .expect("binary runs")
}

fn run_ok(dir: &Path, args: &[&str]) -> String {
    let out = convot(dir, args);
    assert!(
        out.status.success(),
        "convot {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_spec(dir: &Path) {
    std::fs::write(dir.join("spec.cfg"), SPEC).unwrap();
}

#[test]
fn sample_fit_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_spec(dir);
    run_ok(
        dir,
        &["sample", "--spec", "spec.cfg", "--count", "600", "--seed", "3", "--out", "draws.csv"],
    );
    let (headers, draws) =
        read_csv_matrix(&std::fs::read_to_string(dir.join("draws.csv")).unwrap()).unwrap();
    assert_eq!(headers, ["y1", "y2", "y3"]);
    assert_eq!((draws.nrows(), draws.ncols()), (600, 3));

    let report = run_ok(
        dir,
        &["fit", "--data", "draws.csv", "--clusters", "1,2", "--multistart", "2"],
    );
    let kv = KeyValues::parse(&report).unwrap();
    assert_eq!(kv.get("converged"), Some("true"));
    // The fit output doubles as a spec file: density must accept it.
    std::fs::write(dir.join("fit.cfg"), &report).unwrap();
    let fitted = parse_spec(&kv).unwrap();
    assert_eq!(fitted.cluster_sizes(), &[1, 2]);
    // Estimates land near the generating values at this sample size.
    assert!((fitted.location()[0] - 0.1).abs() < 0.15);
    assert!((fitted.xi()[(0, 0)] - 0.6).abs() < 0.2);
    let density = run_ok(dir, &["density", "--spec", "fit.cfg", "--data", "draws.csv"]);
    let (_, vals) = read_csv_matrix(&density).unwrap();
    assert_eq!(vals.nrows(), 600);
    assert!(vals.iter().all(|v| v.is_finite()));
}

#[test]
fn sample_rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_spec(dir);
    let a = run_ok(dir, &["sample", "--spec", "spec.cfg", "--count", "50", "--seed", "9"]);
    let b = run_ok(dir, &["sample", "--spec", "spec.cfg", "--count", "50", "--seed", "9"]);
    assert_eq!(a, b);
    let c = run_ok(dir, &["sample", "--spec", "spec.cfg", "--count", "50", "--seed", "10"]);
    assert_ne!(a, c);
}

#[test]
fn marginal_grid_output() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_spec(dir);
    let pdf = run_ok(
        dir,
        &["marginal", "--spec", "spec.cfg", "--coord", "2", "--grid", "-8:8:0.05"],
    );
    let (headers, table) = read_csv_matrix(&pdf).unwrap();
    assert_eq!(headers, ["y", "pdf"]);
    assert_eq!(table.nrows(), 321);
    // Riemann sum of the pdf over a wide grid is close to one.
    let mass: f64 = table.column(1).iter().sum::<f64>() * 0.05;
    assert!((mass - 1.0).abs() < 5e-3, "mass {mass}");
    let cdf = run_ok(
        dir,
        &["marginal", "--spec", "spec.cfg", "--coord", "2", "--grid", "0.2:0.2:1", "--cdf"],
    );
    let (_, point) = read_csv_matrix(&cdf).unwrap();
    // The marginal of coordinate 2 is symmetric about its location 0.2.
    assert!((point[(0, 1)] - 0.5).abs() < 1e-8);
}

#[test]
fn approx_var_es_table() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    // Diagonal scale: coordinate 1 is an exact scaled t4.
    std::fs::write(
        dir.join("diag.cfg"),
        "clusters = 1,2\ndof = 4,8\nmu = 0.1,0.2,0.3\n\
         xi = 0.6,0,0;0,0.7,0;0,0,0.8\n",
    )
    .unwrap();
    let out = run_ok(
        dir,
        &["approx", "--spec", "diag.cfg", "--coord", "1", "--alphas", "0.01,0.05"],
    );
    let (headers, table) = read_csv_matrix(&out).unwrap();
    assert_eq!(headers, ["mu", "sigma2", "dof", "klic", "alpha", "var", "es"]);
    assert_eq!(table.nrows(), 2);
    // Coordinate 1 is a pure t4 scaled by 0.6: the approximation is exact.
    assert!((table[(0, 0)] - 0.1).abs() < 1e-4);
    assert!((table[(0, 2)] - 4.0).abs() < 0.05);
    assert!(table[(0, 3)].abs() < 1e-6, "klic {}", table[(0, 3)]);
    // ES is below VaR in the left tail, and the 1% quantile below the 5%.
    assert!(table[(0, 6)] < table[(0, 5)]);
    assert!(table[(0, 5)] < table[(1, 5)]);
}

#[test]
fn har_pipeline_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    write_spec(dir);
    run_ok(
        dir,
        &["sample", "--spec", "spec.cfg", "--count", "400", "--seed", "5", "--out", "panel.csv"],
    );
    let report = run_ok(
        dir,
        &[
            "har", "--data", "panel.csv", "--clusters", "1,2", "--multistart", "2", "--robust",
        ],
    );
    let kv = KeyValues::parse(&report).unwrap();
    assert_eq!(kv.get("converged"), Some("true"));
    for j in 1..=3 {
        assert_eq!(kv.parse_f64_list(&format!("series{j}_coef")).unwrap().len(), 4);
        assert_eq!(kv.parse_f64_list(&format!("series{j}_se_robust")).unwrap().len(), 4);
        let pi: f64 = kv.parse_value(&format!("series{j}_persistence")).unwrap();
        assert!(pi.abs() < 0.5, "white-noise panel persistence {pi}");
    }
    // Stage two fixes the location at zero.
    let mu = kv.parse_f64_list("mu").unwrap();
    assert!(mu.iter().all(|&m| m == 0.0));
}

#[test]
fn simulate_rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = format!(
        "{SPEC}structure = just\nsample_sizes = 150\nreplications = 4\nseed = 11\n\
         multistart = 2\nworkers = 2\n"
    );
    std::fs::write(dir.join("mc.cfg"), &cfg).unwrap();
    let a = run_ok(dir, &["simulate", "--config", "mc.cfg"]);
    // Worker count must not affect the report.
    let b = run_ok(dir, &["simulate", "--config", "mc.cfg", "--workers", "1"]);
    assert_eq!(a, b);
    let header = a.lines().next().unwrap();
    assert!(header.starts_with("name,t,truth,mean,std,astd"));
    // Header plus one row per free coordinate (3 mu, 8 free xi entries under
    // the just-identified structure, 2 inverse dof).
    assert_eq!(a.lines().count(), 1 + 13);

    let rates = run_ok(dir, &["rates", "--config", "mc.cfg"]);
    assert!(rates.lines().next().unwrap().ends_with(",r_sigma"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    // Missing file → I/O error, exit 2.
    assert_eq!(
        convot(dir, &["sample", "--spec", "nope.cfg", "--count", "1"]).status.code(),
        Some(2)
    );
    // Unknown flag → usage error, exit 2.
    assert_eq!(convot(dir, &["sample", "--wat"]).status.code(), Some(2));
    // Malformed spec → parse error, exit 2.
    std::fs::write(dir.join("bad.cfg"), "clusters 1,2\n").unwrap();
    assert_eq!(
        convot(dir, &["sample", "--spec", "bad.cfg", "--count", "1"]).status.code(),
        Some(2)
    );
    // Well-formed file violating a domain invariant → exit 1.
    std::fs::write(
        dir.join("dom.cfg"),
        "clusters = 1\ndof = -3\nmu = 0\nxi = 1\n",
    )
    .unwrap();
    let out = convot(dir, &["sample", "--spec", "dom.cfg", "--count", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("degrees of freedom"));
    // Out-of-range coordinate → exit 1.
    write_spec(dir);
    assert_eq!(
        convot(dir, &["marginal", "--spec", "spec.cfg", "--coord", "9", "--grid", "0:1:1"])
            .status
            .code(),
        Some(1)
    );
}

#[test]
fn help_matches_golden_files() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    for sub in ["sample", "density", "marginal", "fit", "har", "approx", "simulate", "rates"] {
        let out = convot(dir, &[sub, "--help"]);
        assert!(out.status.success());
        let golden = std::fs::read_to_string(
            Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("tests/golden/help_{sub}.txt")),
        )
        .unwrap();
        assert_eq!(String::from_utf8(out.stdout).unwrap(), golden, "help for {sub} drifted");
    }
}

#[test]
fn workers_env_var_is_honored() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = format!(
        "{SPEC}structure = just\nsample_sizes = 100\nreplications = 2\nseed = 4\nmultistart = 2\n"
    );
    std::fs::write(dir.join("mc.cfg"), &cfg).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_convot"))
        .args(["simulate", "--config", "mc.cfg"])
        .current_dir(dir)
        .env("CONVOT_WORKERS", "2")
        .output()
        .unwrap();
    assert!(out.status.success());
    let bad = Command::new(env!("CARGO_BIN_EXE_convot"))
        .args(["simulate", "--config", "mc.cfg"])
        .current_dir(dir)
        .env("CONVOT_WORKERS", "two")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
