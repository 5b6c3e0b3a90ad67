use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_entroproj"))
}

fn run(dir: &Path, cmd: &str, config: &str, extra: &[&str]) -> Output {
    let cfg = dir.join("run.json");
    std::fs::write(&cfg, config).unwrap();
    Command::new(bin())
        .arg(cmd)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn rows(path: &Path) -> Vec<(f64, f64)> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let mut it = l.split(',').map(|v| v.parse::<f64>().unwrap());
            (it.next().unwrap(), it.next().unwrap())
        })
        .collect()
}

const EXP: &str = r#"{"scenario": {"kind": "builtin_exponential", "c": 2.0}}"#;
const CSISZAR: &str = r#"{"scenario": {"kind": "builtin_csiszar", "c": 2.0}}"#;

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn validate_verdicts() {
    let d = tempfile::tempdir().unwrap();
    for cfg in [EXP, CSISZAR] {
        let o = run(d.path(), "validate", cfg, &[]);
        assert_eq!(o.status.code(), Some(0));
        assert!(stdout(&o).contains("CRITICAL"), "{}", stdout(&o));
    }
    let uniform = r#"{"scenario": {"kind": "custom",
        "measure": {"type": "density", "family": "uniform", "lo": 0.0, "hi": 1.0},
        "entropy": {"name": "relative"}, "theta": [{"kind": "identity"}],
        "constraint": {"lower_bounds": [0.7]}}}"#;
    let o = run(d.path(), "validate", uniform, &[]);
    assert!(stdout(&o).contains("GOOD"), "{}", stdout(&o));
    // e^{α z²} is not integrable against e^{-z} for any α > 0
    let outside = r#"{"scenario": {"kind": "custom",
        "measure": {"type": "density", "family": "exponential", "rate": 1.0},
        "entropy": {"name": "relative"}, "theta": [{"kind": "power", "k": 2}],
        "constraint": {"lower_bounds": [3.0]}}}"#;
    let o = run(d.path(), "validate", outside, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("INVALID"));
}

#[test]
fn bad_config_exits_one() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), "solve", r#"{"scenario": {"kind": "nope"}}"#, &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn solve_exponential() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), "solve", EXP, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&d.path().join("out/solution.json"));
    assert_eq!(s["kind"], "projection");
    assert!((s["entropy"].as_f64().unwrap() - (1.0 - 2f64.ln())).abs() < 1e-8);
    assert!((s["y"][1].as_f64().unwrap() - 0.5).abs() < 1e-8);
    let dens = rows(&d.path().join("out/density.csv"));
    assert_eq!(dens.len(), 2001);
    for (z, f) in dens.iter().filter(|(z, _)| *z <= 20.0) {
        assert!((f - 0.5 * (0.5 * z).exp()).abs() <= 1e-8 * (0.5 * z).exp());
    }
}

#[test]
fn solve_csiszar_is_generalized() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), "solve", CSISZAR, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s = json(&d.path().join("out/solution.json"));
    assert_eq!(s["kind"], "generalized");
    assert!((s["x_s"][1].as_f64().unwrap() - 1.0).abs() < 1e-4);
    assert!((s["x_a"][1].as_f64().unwrap() - 1.0).abs() < 1e-4);
}

#[test]
fn solve_below_mean_is_r_itself() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), "solve", r#"{"scenario": {"kind": "builtin_exponential", "c": 0.5}}"#, &[]);
    assert_eq!(o.status.code(), Some(0));
    let s = json(&d.path().join("out/solution.json"));
    assert_eq!(s["kind"], "r_itself");
    assert!(s["entropy"].as_f64().unwrap().abs() < 1e-10);
}

#[test]
fn infeasible_exits_three() {
    let d = tempfile::tempdir().unwrap();
    let cfg = r#"{"scenario": {"kind": "custom",
        "measure": {"type": "discrete", "points": [0.0, 0.5, 1.0], "weights": [0.2, 0.3, 0.5]},
        "entropy": {"name": "fermi_dirac"}, "theta": [{"kind": "identity"}],
        "constraint": {"lower_bounds": [2.0]}}}"#;
    let o = run(d.path(), "solve", cfg, &[]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

/// `∫ γ*(f) dR` with `γ*(t) = t log t - t + 1`, `log f` interpolated
/// linearly between the rows of `density.csv` and continued with the last
/// slope beyond them.
fn entropy_from_csv(rows: &[(f64, f64)], log_r: impl Fn(f64) -> f64) -> f64 {
    let log_f = |z: f64| -> f64 {
        let i = rows.partition_point(|(zz, _)| *zz <= z).clamp(1, rows.len() - 1);
        let (z0, f0) = rows[i - 1];
        let (z1, f1) = rows[i];
        let (l0, l1) = (f0.ln(), f1.ln());
        l0 + (l1 - l0) * (z - z0) / (z1 - z0)
    };
    let h = |z: f64| {
        let (l, lr) = (log_f(z), log_r(z));
        (l + lr).exp() * (l - 1.0) + lr.exp()
    };
    // Simpson in u = log z from the first positive row to z = 1e8
    let (a, b) = (rows[1].0.ln(), 1e8f64.ln());
    let m = 400_000;
    let du = (b - a) / m as f64;
    let g = |u: f64| h(u.exp()) * u.exp();
    let mut s = g(a) + g(b);
    for i in 1..m {
        s += g(a + i as f64 * du) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * du / 3.0 + 0.5 * (h(0.0) + h(rows[1].0)) * rows[1].0
}

#[test]
fn density_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), "solve", EXP, &[]);
    assert_eq!(o.status.code(), Some(0));
    let s = json(&d.path().join("out/solution.json"));
    let e = entropy_from_csv(&rows(&d.path().join("out/density.csv")), |z| -z);
    assert!((e - s["entropy_ac"].as_f64().unwrap()).abs() < 1e-5, "{e}");

    let o = run(d.path(), "solve", CSISZAR, &[]);
    assert_eq!(o.status.code(), Some(0));
    let s = json(&d.path().join("out/solution.json"));
    // a₀ = ∫ e^{-z}/(1+z³) dz by Simpson on [0, 60]
    let n = 600_000;
    let hz = 60.0 / n as f64;
    let k = |z: f64| (-z).exp() / (1.0 + z * z * z);
    let mut a0 = k(0.0) + k(60.0);
    for i in 1..n {
        a0 += k(i as f64 * hz) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    a0 *= hz / 3.0;
    let e = entropy_from_csv(&rows(&d.path().join("out/density.csv")), |z| -z - (1.0 + z * z * z).ln() - a0.ln());
    assert!((e - s["entropy_ac"].as_f64().unwrap()).abs() < 1e-5, "{e}");
}

#[test]
fn analyze_curves() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), "analyze", CSISZAR, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let xi = rows(&d.path().join("out/xi_curve.csv"));
    let tail: Vec<_> = xi.iter().filter(|(x, _)| (1.5..=3.0).contains(x)).collect();
    let (first, last) = (tail[0], tail[tail.len() - 1]);
    assert!(((last.1 - first.1) / (last.0 - first.0) - 1.0).abs() < 1e-3);
    let rec = json(&d.path().join("out/recession.json"));
    assert_eq!(rec["steep"], false);
    assert!((rec["x_star"].as_f64().unwrap() - 1.0).abs() < 1e-4);
    let lam = rows(&d.path().join("out/lambda_curve.csv"));
    // Λ(0) = log R(Z) = 0 up to the rounding of the normalizing constant
    assert!(lam.iter().find(|(y, _)| *y == 0.0).unwrap().1.abs() < 1e-12);

    let o = run(d.path(), "analyze", EXP, &[]);
    assert_eq!(o.status.code(), Some(0));
    let xi = rows(&d.path().join("out/xi_curve.csv"));
    for w in xi.windows(3) {
        assert!(w[0].1 - 2.0 * w[1].1 + w[2].1 > 0.0, "{w:?}");
    }
    assert_eq!(json(&d.path().join("out/recession.json"))["steep"], true);
}

const GIBBS: &str = r#"{"scenario": {"kind": "builtin_exponential", "c": 2.0},
  "gibbs": {"sim": {"n": 300, "delta": 0.05, "trials": 200, "seed": 42, "bins": [0, 1, 2, 3, 4, 6, 8],
                    "proposal": {"kind": "exponential_tilt", "y": 0.5}, "top_k": 1},
            "singular_diagnostic": true, "rate_ladder": [10, 20]}}"#;

#[test]
fn gibbs_outputs_and_seed_override() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), "gibbs", GIBBS, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let a = std::fs::read_to_string(d.path().join("out/gibbs.json")).unwrap();
    let hist = std::fs::read_to_string(d.path().join("out/conditioned_hist.csv")).unwrap();
    assert!(hist.starts_with("bin_lo,bin_hi,mass,target_mass\n"));
    assert_eq!(hist.lines().count(), 8);
    let v: Value = serde_json::from_str(&a).unwrap();
    let total: f64 = v["result"]["conditioned_hist"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
    assert_eq!(v["rates"].as_array().unwrap().len(), 2);

    run(d.path(), "gibbs", GIBBS, &[]);
    assert_eq!(a, std::fs::read_to_string(d.path().join("out/gibbs.json")).unwrap());
    run(d.path(), "gibbs", GIBBS, &["--seed", "43"]);
    assert_ne!(a, std::fs::read_to_string(d.path().join("out/gibbs.json")).unwrap());
    run(d.path(), "gibbs", GIBBS, &["--seed", "43", "--sequential"]);
    let b = std::fs::read_to_string(d.path().join("out/gibbs.json")).unwrap();
    run(d.path(), "gibbs", GIBBS, &["--seed", "43"]);
    assert_eq!(b, std::fs::read_to_string(d.path().join("out/gibbs.json")).unwrap());
}

#[test]
fn gibbs_without_acceptance_exits_four() {
    let d = tempfile::tempdir().unwrap();
    let cfg = r#"{"scenario": {"kind": "builtin_exponential", "c": 30.0},
      "gibbs": {"sim": {"n": 50, "delta": 0.05, "trials": 20, "seed": 1, "bins": [0, 1, 2]}}}"#;
    let o = run(d.path(), "gibbs", cfg, &[]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn quiet_silences_stdout() {
    let d = tempfile::tempdir().unwrap();
    let o = run(d.path(), "solve", EXP, &["--quiet"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
}
