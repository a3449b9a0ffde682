use std::path::PathBuf;
use std::process::Command;

use clap::Parser;
use serde_json::Value;

use roughness_cli::format::parse_system_file;
use roughness_cli::pipeline::{Overrides, Settings};
use roughness_cli::{run, Cli};

fn system(name: &str) -> String {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "systems", name].iter().collect();
    p.display().to_string()
}

/// Runs the library entry point and returns (status, stdout, stderr).
fn invoke(args: &[&str], env_tol: Option<&str>) -> (i32, String, String) {
    let cli = Cli::try_parse_from(std::iter::once("roughness").chain(args.iter().copied())).unwrap();
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run(&cli, env_tol, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn machine(args: &[&str]) -> Value {
    let mut all = args.to_vec();
    all.extend(["--format", "machine"]);
    let (code, out, err) = invoke(&all, None);
    assert_eq!(code, 0, "{err}");
    serde_json::from_str(&out).unwrap()
}

fn condition<'a>(list: &'a Value, id: &str) -> &'a Value {
    list.as_array().unwrap().iter().find(|c| c["id"] == id).unwrap_or_else(|| panic!("no {id}"))
}

#[test]
fn running_example_is_certified_and_matches_the_spectrum() {
    let r = machine(&["analyze", &system("running.json")]);
    let sum = condition(&r["conditions"], "halfline_sum");
    assert_eq!(sum["satisfied"], true);
    assert!((sum["threshold"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    assert!(r["oracle"]["projector_distance"].as_f64().unwrap() < 1e-6);
    assert_eq!(r["oracle"]["rank_match"], true);
    for d in r["oracle"]["decay"].as_array().unwrap() {
        assert_eq!(d["sound"], true, "{d}");
    }
    assert_eq!(r["verdicts"]["lyapunov"], true);
    assert_eq!(r["digest"].as_str().unwrap().len(), 64);
}

#[test]
fn zero_coupling_passes_everything_trivially() {
    let r = machine(&["analyze", &system("uncoupled.json")]);
    for c in r["conditions"].as_array().unwrap() {
        assert_eq!(c["satisfied"], true, "{}", c["id"]);
    }
    assert_eq!(r["perturbed"]["Z_norm"].as_f64(), Some(0.0));
    assert_eq!(r["perturbed"]["Z_prime_norm"].as_f64(), Some(0.0));
    assert_eq!(r["lyapunov"]["satisfied"], true);
    assert_eq!(r["oracle"]["projector_distance"].as_f64(), Some(0.0));
}

#[test]
fn axis_eigenvalue_names_the_block() {
    let (code, out, err) = invoke(&["analyze", &system("rotation.json")], None);
    assert_eq!(code, 2);
    assert!(out.is_empty());
    assert!(err.contains("block 2"), "{err}");
    let (code, _, err) = invoke(&["analyze", &system("rotation.json"), "--format", "machine"], None);
    assert_eq!(code, 2);
    let e: Value = serde_json::from_str(&err).unwrap();
    assert_eq!(e["error"]["kind"], "not_hyperbolic");
}

#[test]
fn bad_input_exits_with_validation_status() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"schema_version": "1", "blocks": [{"matrix": [[1, 2]]}]}"#).unwrap();
    let (code, _, err) = invoke(&["analyze", bad.to_str().unwrap()], None);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("expected square"), "{err}");
    let (code, _, _) = invoke(&["analyze", dir.path().join("missing.json").to_str().unwrap()], None);
    assert_eq!(code, 2);
    let (code, _, err) = invoke(&["analyze", &system("running.json"), "--margin", "1.5"], None);
    assert_eq!(code, 2, "{err}");
    let (code, _, err) = invoke(&["analyze", &system("running.json")], Some("not-a-number"));
    assert_eq!(code, 2, "{err}");
}

#[test]
fn truncation_too_short_is_a_numerical_failure() {
    let (code, _, err) = invoke(&["analyze", &system("running.json"), "--tinf", "0.5"], None);
    assert_eq!(code, 3, "{err}");
}

#[test]
fn tolerance_precedence() {
    let text = std::fs::read_to_string(system("running.json")).unwrap();
    let mut file = parse_system_file(&text).unwrap();
    let none = Overrides::default();
    assert_eq!(Settings::resolve(&file, &none, None).unwrap().tol, 1e-10);
    assert_eq!(Settings::resolve(&file, &none, Some("1e-8")).unwrap().tol, 1e-8);
    file.analysis.tolerance = Some(1e-9);
    assert_eq!(Settings::resolve(&file, &none, Some("1e-8")).unwrap().tol, 1e-9);
    let flag = Overrides { tol: Some(1e-7), ..Overrides::default() };
    assert_eq!(Settings::resolve(&file, &flag, Some("1e-8")).unwrap().tol, 1e-7);
}

#[test]
fn machine_reports_are_deterministic() {
    let args = ["analyze", &system("three_blocks.json"), "--seed", "11", "--format", "machine"];
    let (_, a, _) = invoke(&args, None);
    let (_, b, _) = invoke(&args, None);
    assert_eq!(a, b);
    let r: Value = serde_json::from_str(&a).unwrap();
    assert_eq!(r["settings"]["seed"], 11);
    assert_eq!(r["nonlinear"]["sampling"]["seed"], 11);
}

#[test]
fn solve_stays_under_the_envelope() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("run");
    let r = machine(&["solve", &system("running.json"), "--initial", "basis:1", "--out", prefix.to_str().unwrap()]);
    assert_eq!(r["certificate"], "halfline_sum");
    assert!(r["envelope_ratio"].as_f64().unwrap() <= 1.0);
    let plot = std::fs::read_to_string(dir.path().join("run.plot.tsv")).unwrap();
    let mut rows = 0;
    for line in plot.lines().skip(1) {
        let v: Vec<f64> = line.split('\t').map(|s| s.parse().unwrap()).collect();
        assert!(v[1] <= v[2], "{line}");
        rows += 1;
    }
    assert_eq!(rows, r["points"].as_u64().unwrap() as usize);
    let traj = std::fs::read_to_string(dir.path().join("run.traj.tsv")).unwrap();
    assert!(traj.starts_with("t\tx1\tx2\n"));
}

#[test]
fn zero_data_gives_zero_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["running.json", "sin_coupling.json"] {
        let prefix = dir.path().join(name);
        let r = machine(&["solve", &system(name), "--initial", "zero", "--out", prefix.to_str().unwrap()]);
        assert_eq!(r["sup_norm"].as_f64(), Some(0.0), "{name}");
        let traj = std::fs::read_to_string(format!("{}.traj.tsv", prefix.display())).unwrap();
        for line in traj.lines().skip(1) {
            assert!(line.split('\t').skip(1).all(|x| x.parse::<f64>().unwrap() == 0.0));
        }
    }
}

#[test]
fn uncertified_systems_are_refused_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("anti");
    let (code, out, err) = invoke(&["solve", &system("antisymmetric.json"), "--out", prefix.to_str().unwrap()], None);
    assert_eq!(code, 2);
    assert!(out.is_empty());
    assert!(err.contains("halfline_sum"), "{err}");
    assert!(!dir.path().join("anti.traj.tsv").exists());
    // outside the certified initial ball
    let (code, _, err) = invoke(&["solve", &system("sin_coupling.json"), "--initial", "0.6,0", "--out", prefix.to_str().unwrap()], None);
    assert_eq!(code, 2);
    assert!(err.contains("initial radius"), "{err}");
    // not in the stable subspace
    let (code, _, _) = invoke(&["solve", &system("running.json"), "--initial", "0,1", "--out", prefix.to_str().unwrap()], None);
    assert_eq!(code, 2);
}

#[test]
fn nonlinear_solve_stays_in_the_ball() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("sin");
    let r = machine(&["solve", &system("sin_coupling.json"), "--initial", "0.4,0", "--out", prefix.to_str().unwrap()]);
    assert!(r["sup_norm"].as_f64().unwrap() <= 1.0);
    assert!(r["envelope_ratio"].as_f64().unwrap() <= 1.0);
}

#[test]
fn sweep_finds_the_summed_boundary() {
    let r = machine(&["sweep", &system("running.json"), "--from", "0", "--to", "5", "--steps", "50"]);
    let first = r["first_failure"]["halfline_sum"].as_f64().unwrap();
    assert!((first - 2.5).abs() <= 0.1 + 1e-12, "{first}");
    let rows = r["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 51);
    for (_, v) in rows[0]["holds"].as_object().unwrap() {
        assert_eq!(v, &Value::Bool(true));
    }
    assert!(r["hyperbolic_until"].as_f64().unwrap() > first);
    // every condition holds on an initial interval
    for id in rows[0]["holds"].as_object().unwrap().keys() {
        let flags: Vec<bool> = rows.iter().map(|row| row["holds"][id].as_bool().unwrap()).collect();
        let k = flags.iter().position(|h| !h).unwrap_or(flags.len());
        assert!(flags[k..].iter().all(|h| !h), "{id} is not an interval");
    }
}

#[test]
fn sweep_reports_the_collision() {
    let r = machine(&["sweep", &system("antisymmetric.json"), "--to", "2", "--steps", "20"]);
    let changes = r["rank_changes"].as_array().unwrap();
    assert_eq!(changes.len(), 1);
    assert!((changes[0]["lambda"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(changes[0]["from"], 1);
    assert!(changes[0]["to"].is_null());
    assert!((r["hyperbolic_until"].as_f64().unwrap() - 0.9).abs() < 1e-12);
}

#[test]
fn binary_reports_to_stdout_and_honours_the_environment() {
    let bin = env!("CARGO_BIN_EXE_roughness");
    let out = Command::new(bin)
        .args(["analyze", &system("running.json"), "--format", "machine"])
        .env("ROUGHNESS_TOL", "1e-9")
        .output()
        .unwrap();
    assert!(out.status.success());
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["settings"]["tolerance"].as_f64(), Some(1e-9));
    let out = Command::new(bin).args(["analyze", &system("rotation.json")]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());
    assert!(!out.stderr.is_empty());
}
