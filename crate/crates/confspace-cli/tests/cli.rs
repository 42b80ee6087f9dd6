use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SIMULATE: &str = r#"
command = "simulate"
seed = 11

[model]
type = "contact"
lambda = 0.0
a = { kind = "tophat", height = 0.5, radius = 1.0 }

[window]
lower = [0.0]
upper = [10.0]

[sim]
initial = { kind = "poisson", z = 2.0 }
t_end = 2.0
snapshot_times = [0.0, 1.0, 2.0]
replicas = 20
"#;

fn confspace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_confspace")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn read_mean_counts(dir: &Path) -> Vec<f64> {
    let text = fs::read_to_string(dir.join("mean_count.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("time,mean_count,std_err"));
    lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect()
}

#[test]
fn pure_death_contact_decays() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SIMULATE);
    let out = tmp.path().join("out");
    let o = confspace(&["--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_mean_counts(&out);
    assert_eq!(m.len(), 3);
    // E N(t) = 20 e^{-t}
    for (t, v) in [0.0f64, 1.0, 2.0].iter().zip(&m) {
        let want = 20.0 * (-t).exp();
        assert!((v - want).abs() < 4.0 * (want / 20.0).sqrt() + 1e-9, "t={t}: {v} vs {want}");
    }
    for f in ["run.json", "snapshots.csv", "events.csv", "correlations.csv", "report.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn run_json_reproduces_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SIMULATE);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(confspace(&["--config", &cfg, "--out", a.to_str().unwrap()]).status.success());
    let echoed = a.join("run.json");
    assert!(confspace(&["--config", echoed.to_str().unwrap(), "--out", b.to_str().unwrap()]).status.success());
    for f in ["snapshots.csv", "mean_count.csv", "events.csv", "correlations.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let out = out.to_str().unwrap();

    let no_seed = write_config(tmp.path(), &SIMULATE.replace("seed = 11\n", ""));
    let o = confspace(&["--config", &no_seed, "--out", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));

    assert_eq!(confspace(&["--bogus-flag"]).status.code(), Some(2));
    assert_eq!(confspace(&[]).status.code(), Some(2));
    assert_eq!(confspace(&["simulate", "--suite", "lp", "--out", out]).status.code(), Some(2));
    assert_eq!(confspace(&["validate", "--suite", "nope", "--out", out]).status.code(), Some(2));

    let o = confspace(&["validate", "--suite", "algebra", "--out", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(tmp.path().join("o/report.txt")).unwrap();
    assert!(report.lines().last() == Some("ALL PASS"), "{report}");
    let checks = fs::read_to_string(tmp.path().join("o/checks.csv")).unwrap();
    assert_eq!(checks.lines().count(), 4);
}

#[test]
fn particle_cap_suppresses_births_and_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SIMULATE.replace("lambda = 0.0", "lambda = 40.0").replace("replicas = 20", "replicas = 1\nparticle_cap = 50");
    let cfg = write_config(tmp.path(), &text);
    let out = tmp.path().join("o");
    let o = confspace(&["--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(read_mean_counts(&out).iter().all(|&n| n <= 50.0));
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(!report.contains("saturations=0"), "{report}");
}
