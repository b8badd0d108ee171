use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qoctl::config::RunConfig;

fn recipes() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../recipes")
}

fn qoctl(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qoctl"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("qoctl runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

/// Data rows of an artifact, header lines skipped.
fn rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| l.split('\t').map(|c| c.trim().parse().unwrap()).collect())
        .collect()
}

const SMALL_TWO_LEVEL: &str = r#"
[system]
kind = "two_level"
omega_b = 0.1568
mu = 0.3921
t_final = 50.0
dt = 0.01
n_states = 2

[target]
kind = "projection"
initial = 0
state = 1

[optimizer]
scheme = "rapid"
alpha = [0.3]
guess = 0.05
max_iters = 15

[output]
occupation_stride = 50
"#;

#[test]
fn eigen_reports_harmonic_ladder() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qoctl(&["eigen"], &recipes().join("harmonic_eigen.toml"), tmp.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let e = rows(&tmp.path().join("energies.tsv"));
    assert_eq!(e.len(), 4);
    for w in e.windows(2) {
        let gap = w[1][1] - w[0][1];
        assert!((gap - 1.0).abs() < 1e-3, "gap {gap}");
    }
    let d = rows(&tmp.path().join("dipoles.tsv"));
    assert_eq!(d.len(), 10);
    assert!(d.iter().all(|r| r[1] <= r[2]));
}

#[test]
fn artifacts_share_header_and_config_hash() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_TWO_LEVEL);
    let out = tmp.path().join("out");
    let o = qoctl(&["optimize", "--max-iters", "15"], &cfg, &out);
    assert!(o.status.code() == Some(0) || o.status.code() == Some(1));
    let written = fs::read_to_string(out.join("config.toml")).unwrap();
    let hash = written.lines().next().unwrap().strip_prefix("# config-sha256 ").unwrap().to_string();
    let reparsed = RunConfig::parse(&written).unwrap();
    assert_eq!(reparsed.hash().unwrap(), hash);
    for name in ["field.tsv", "spectrum.tsv", "occupations.tsv", "convergence.tsv", "summary.txt"] {
        let text = fs::read_to_string(out.join(name)).unwrap();
        let first = text.lines().next().unwrap();
        assert_eq!(first, format!("# qoctl {name} config-sha256 {hash}"));
        assert!(text.lines().nth(1).unwrap().starts_with("# "));
    }
    let conv = rows(&out.join("convergence.tsv"));
    assert_eq!(conv.len(), 16);
    for r in &conv {
        assert!((r[4] - (r[1] + r[2] + r[3])).abs() < 1e-12);
    }
}

#[test]
fn runs_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL_TWO_LEVEL);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    qoctl(&["optimize"], &cfg, &a);
    qoctl(&["optimize", "--jobs", "1"], &cfg, &b);
    for name in ["config.toml", "field.tsv", "spectrum.tsv", "occupations.tsv", "convergence.tsv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name} differs");
    }
}

#[test]
fn floor_sets_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("{SMALL_TWO_LEVEL}floor = 0.9999\n"));
    let o = qoctl(&["optimize", "--max-iters", "2"], &cfg, &tmp.path().join("low"));
    assert_eq!(o.status.code(), Some(1));
    let cfg = write_config(tmp.path(), &format!("{SMALL_TWO_LEVEL}floor = 0.0\n"));
    let o = qoctl(&["optimize", "--max-iters", "2"], &cfg, &tmp.path().join("ok"));
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("best J1 "));
}

#[test]
fn unknown_keys_and_bad_values_are_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &SMALL_TWO_LEVEL.replace("guess = 0.05", "guess = 0.05\nlearning_rate = 1.0"));
    let o = qoctl(&["optimize"], &cfg, &tmp.path().join("x"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));
    let cfg = write_config(tmp.path(), &SMALL_TWO_LEVEL.replace("alpha = [0.3]", "alpha = [-1.0]"));
    assert_eq!(qoctl(&["optimize"], &cfg, &tmp.path().join("y")).status.code(), Some(2));
    let cfg = write_config(tmp.path(), &SMALL_TWO_LEVEL.replace("state = 1", "state = 7"));
    assert_eq!(qoctl(&["optimize"], &cfg, &tmp.path().join("z")).status.code(), Some(2));
}

#[test]
fn twolevel_table_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[system]\nkind = \"two_level\"\nomega_b = 0.1568\nmu = 0.3921\n\n[twolevel]\ntimes = [400.0, 100.0]\nrwa_only = true\n",
    );
    let out = tmp.path().join("rwa");
    let o = qoctl(&["twolevel"], &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t = rows(&out.join("twolevel.tsv"));
    assert_eq!(t.len(), 2);
    assert_eq!(t[0][0], 400.0);
    assert!((t[0][1] - 0.9986).abs() < 5e-3);
    assert!(t[0][2].is_nan() && t[0][4].is_nan() && t[0][6].is_nan());
    assert!((t[1][3] - 0.3212).abs() < 1e-3);

    let cfg = write_config(
        tmp.path(),
        "[system]\nkind = \"two_level\"\nomega_b = 0.1568\nmu = 0.3921\n\n[twolevel]\ntimes = [50.0]\npenalties = [0.3]\n",
    );
    let out = tmp.path().join("oct");
    assert!(qoctl(&["twolevel", "--max-iters", "30"], &cfg, &out).status.success());
    let t = rows(&out.join("twolevel.tsv"));
    assert!(t[0][2] > 0.5 && t[0][4] > 0.0);
    assert!(t[0][5] <= t[0][2] && t[0][6] > 0.0);

    let cfg = write_config(tmp.path(), "[system]\nkind = \"two_level\"\n\n[twolevel]\ntimes = []\n");
    let out = tmp.path().join("empty");
    assert!(qoctl(&["twolevel"], &cfg, &out).status.success());
    assert!(rows(&out.join("twolevel.tsv")).is_empty());
}

#[test]
fn controllability_verdicts() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qoctl(&["controllability"], &recipes().join("twolevel_controllability.toml"), &tmp.path().join("a"));
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("rank 4 of 4: completely controllable"));
    assert_eq!(rows(&tmp.path().join("a/singular_values.tsv")).len(), 4);

    let cfg = write_config(tmp.path(), "[system]\nkind = \"matrices\"\nmatrix_file = \"traceless.mat\"\n");
    fs::copy(recipes().join("twolevel_traceless.mat"), tmp.path().join("traceless.mat")).unwrap();
    let o = qoctl(&["controllability"], &cfg, &tmp.path().join("b"));
    assert!(o.status.success());
    let s = String::from_utf8_lossy(&o.stdout);
    assert!(s.contains("rank 3 of 4") && s.contains("not controllable"), "{s}");
}
