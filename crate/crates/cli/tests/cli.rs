use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tstsim"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).expect("json output")
}

fn manifest(dir: &Path) -> Value {
    json(&fs::read(dir.join("manifest.json")).unwrap())
}

/// Masses of the last block of a trajectory file, keyed by trait id.
fn last_block(path: &Path) -> Vec<(String, f64)> {
    let text = fs::read_to_string(path).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    let t_last = rows.last().unwrap()[0];
    rows.iter()
        .filter(|r| r[0] == t_last)
        .map(|r| (r[1].to_string(), r[5].parse().unwrap()))
        .collect()
}

const TWO_TRAITS: &str = r#"
seed = 1

[scaling]
K = 1000
epsilon = 1e-12

[kernels]
alpha_self = 1.0
alpha_neighbor = 1.0
m_neighbor = 0.5

[[traits]]
id = "x0"
b = 3.0

[[traits]]
id = "x1"
b = 6.0

[initial]
x0 = "3K"

[horizon]
value = 2.0
unit = "ln_inv_eps"

[output]
grid_points = 2001

[[probes]]
id = "x1_up"
trait = "x1"
level = "eta"
direction = "up"
"#;

#[test]
fn ssa_three_traits_ends_at_parity_equilibrium() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    ok(bin()
        .args(["run-ssa", "--replicas", "2", "--out"])
        .arg(&out)
        .arg("--scenario")
        .arg(scenario("three_traits.toml"))
        .output()
        .unwrap());
    let m = manifest(&out);
    assert_eq!(m["kind"], "ssa");
    assert_eq!(m["files"].as_array().unwrap().len(), 2);
    assert!(m["wall_time_s"].as_f64().unwrap() >= 0.0);
    for f in m["files"].as_array().unwrap() {
        let last = last_block(&out.join(f.as_str().unwrap()));
        let want = [("x0", 3.0), ("x1", 0.0), ("x2", 8.0)];
        for ((id, m), (wid, w)) in last.iter().zip(want) {
            assert_eq!(id, wid);
            assert!((m - w).abs() < 0.5, "{id}: {m}");
        }
    }
}

#[test]
fn tst_without_mutation_is_a_single_record() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("one.toml");
    let src = TWO_TRAITS
        .replace("[[traits]]\nid = \"x1\"\nb = 6.0\n", "")
        .replace("[[probes]]\nid = \"x1_up\"\ntrait = \"x1\"\nlevel = \"eta\"\ndirection = \"up\"\n", "");
    fs::write(&sc, src).unwrap();
    let out = dir.path().join("tst");
    ok(bin().arg("run-tst").arg("--scenario").arg(&sc).arg("--out").arg(&out).output().unwrap());
    let text = fs::read_to_string(out.join("tst_r0000.csv")).unwrap();
    assert_eq!(text, "time,trait_id,rank,b,d,mass\n0,x0,0,3,0,3\n");
}

#[test]
fn seed_changes_events_not_validation() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        let o = bin()
            .args(["run-ssa", "--replicas", "1", "--seed", seed, "--override", "horizon.value=0.3", "--out"])
            .arg(&out)
            .arg("--scenario")
            .arg(scenario("three_traits.toml"))
            .output()
            .unwrap();
        (o.status.success(), fs::read(out.join("ssa_r0000.csv")).unwrap(), manifest(&out))
    };
    let (ok_a, a, ma) = run("1", "a");
    let (ok_b, b, mb) = run("2", "b");
    assert!(ok_a && ok_b);
    assert_ne!(a, b);
    assert_eq!(ma["advisories"], mb["advisories"]);
    assert_eq!(mb["resolved"]["seed"], 2);
}

#[test]
fn manifest_replay_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for (cmd, sc) in [("run-ssa", "three_traits.toml"), ("run-tst", "convergence.toml"), ("run-gst", "diploid.toml")] {
        let first = dir.path().join(format!("{cmd}-1"));
        let second = dir.path().join(format!("{cmd}-2"));
        ok(bin()
            .args([cmd, "--replicas", "3", "--override", "seed=42", "--out"])
            .arg(&first)
            .arg("--scenario")
            .arg(scenario(sc))
            .output()
            .unwrap());
        ok(bin()
            .args([cmd, "--out"])
            .arg(&second)
            .arg("--scenario")
            .arg(first.join("manifest.json"))
            .output()
            .unwrap());
        let (m1, m2) = (manifest(&first), manifest(&second));
        assert_eq!(m1["scenario"], m2["scenario"]);
        assert_eq!(m1["files"], m2["files"]);
        for f in m1["files"].as_array().unwrap() {
            let f = f.as_str().unwrap();
            assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{cmd} {f}");
        }
    }
}

#[test]
fn analyze_ode_matches_growth_prediction() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("two.toml");
    fs::write(&sc, TWO_TRAITS).unwrap();
    let out = dir.path().join("ode");
    ok(bin().arg("run-ode").arg("--scenario").arg(&sc).arg("--out").arg(&out).output().unwrap());
    let m = manifest(&out);
    assert_eq!(m["deterministic"], true);
    let predicted = m["extra"]["phase_predictions"]["growth"][0][1].as_f64().unwrap();
    assert!((predicted - 1.0 / 3.0).abs() < 1e-15);
    let dense = m["replicas"][0]["probes"][0].as_f64().unwrap();

    let a = json(
        &ok(bin()
            .arg("analyze")
            .arg("--input")
            .arg(out.join("ode.csv"))
            .arg("--scenario")
            .arg(&sc)
            .output()
            .unwrap())
        .stdout,
    );
    let t = a["single"][0]["time"].as_f64().unwrap();
    let scaled = a["single"][0]["scaled"].as_f64().unwrap();
    // Grid interpolation against the dense-output root.
    assert!((t - dense).abs() < 1e-3 * dense, "{t} vs {dense}");
    // Hitting eta from epsilon at rate f(x1, x0) = 3 takes ln(1/epsilon)/3 up to O(1).
    assert!((scaled - predicted).abs() < 0.05 * predicted, "{scaled} vs {predicted}");
}

#[test]
fn analyze_empty_glob_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .arg("analyze")
        .arg("--input")
        .arg(dir.path().join("nothing_*.csv"))
        .arg("--scenario")
        .arg(scenario("three_traits.toml"))
        .output()
        .unwrap();
    assert!(!o.status.success());
    let e = json(&o.stderr);
    assert!(e["error"]["message"].as_str().unwrap().starts_with("no input"));
}

#[test]
fn schema_mismatch_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("good.csv"), "time,trait_id,rank,b,d,mass\n0,x0,0,3,0,3\n").unwrap();
    fs::write(dir.path().join("bad.csv"), "time,trait,mass\n0,x0,3\n").unwrap();
    let o = bin()
        .arg("analyze")
        .arg("--input")
        .arg(dir.path().join("*.csv"))
        .arg("--scenario")
        .arg(scenario("three_traits.toml"))
        .output()
        .unwrap();
    assert!(!o.status.success());
    let e = json(&o.stderr);
    assert_eq!(e["error"]["kind"], "trajectory");
    let msg = e["error"]["message"].as_str().unwrap();
    assert!(msg.contains("bad.csv") && !msg.contains("good.csv"), "{msg}");
}

#[test]
fn compare_self_is_within_bands() {
    let dir = tempfile::tempdir().unwrap();
    // K * sigma = 1, so natural and mutation-scale times coincide.
    let ov = ["--override", "scaling.K=100", "--override", "scaling.sigma=0.01", "--replicas", "300"];
    for (name, seed) in [("a", "1"), ("b", "2")] {
        ok(bin()
            .arg("run-tst")
            .args(ov)
            .args(["--seed", seed, "--out"])
            .arg(dir.path().join(name))
            .arg("--scenario")
            .arg(scenario("convergence.toml"))
            .output()
            .unwrap());
    }
    let o = ok(bin()
        .arg("compare")
        .args(ov)
        .arg("--micro")
        .arg(dir.path().join("a/*.csv"))
        .arg("--tst")
        .arg(dir.path().join("b/*.csv"))
        .arg("--scenario")
        .arg(scenario("convergence.toml"))
        .args(["--times", "0.5,1,2"])
        .output()
        .unwrap());
    let r = json(&o.stdout);
    assert_eq!(r["parity_violations"], 0);
    assert_eq!(r["micro_observations"], 900);
    assert_eq!(r["bins_within"], true);
    assert_eq!(r["jumps_within"], true);
    for t in r["times"].as_array().unwrap() {
        assert!(t["tv_distance"].as_f64().unwrap() < 0.1);
    }
}

#[test]
fn check_reports_verdicts() {
    let o = ok(bin().arg("check").arg("--scenario").arg(scenario("three_traits.toml")).output().unwrap());
    let r = json(&o.stdout);
    assert_eq!(r["verdicts"]["A1"], true);
    assert_eq!(r["verdicts"]["A2"], true);
    assert_eq!(r["verdicts"]["B1"], true);
    assert_eq!(r["verdicts"]["B3"], false);
}

#[test]
fn invalid_scenario_gives_error_record() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("bad.toml");
    fs::write(&sc, TWO_TRAITS.replace("b = 6.0", "b = 2.0")).unwrap();
    let o = bin()
        .arg("run-ssa")
        .arg("--scenario")
        .arg(&sc)
        .arg("--out")
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert!(!o.status.success());
    let e = json(&o.stderr);
    assert_eq!(e["error"]["kind"], "scenario");
    assert!(e["error"]["message"].as_str().unwrap().contains("line"), "{e}");
}
