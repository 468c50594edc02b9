use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sorbfit::synth::PopulationSpec;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sorbfit"));
    c.env_remove("SORBFIT_SEED");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn sorbfit")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stderr_json(out: &Output) -> serde_json::Value {
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err.lines().last().expect("stderr line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("not JSON ({e}): {line}"))
}

fn small_spec(dir: &Path) -> PathBuf {
    let spec = PopulationSpec {
        n_per_lithology: 10,
        pressures: vec![2.0, 5.0, 10.0, 20.0, 40.0, 70.0, 100.0, 150.0],
        ..PopulationSpec::default()
    };
    let p = dir.join("spec.json");
    std::fs::write(&p, serde_json::to_string(&spec).unwrap()).unwrap();
    p
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn full_pipeline_runs_stage_by_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let spec = small_spec(d);
    ok(d, &["--seed", "5", "synth", "--spec", spec.to_str().unwrap(), "--out", "syn"]);
    for f in ["isotherms.csv", "properties.csv", "truth.json", "config.json"] {
        assert!(d.join("syn").join(f).exists(), "{f}");
    }
    ok(d, &["ingest", "--isotherms", "syn/isotherms.csv", "--properties", "syn/properties.csv", "--out", "ing"]);
    let split: serde_json::Value = serde_json::from_str(&read(d.join("ing/split.json"))).unwrap();
    assert_eq!(split["partition"].as_object().unwrap().len(), 30);

    ok(d, &["fit", "--in", "ing", "--forms", "langmuir,freundlich,sips", "--cv", "3"]);
    let fits: serde_json::Value = serde_json::from_str(&read(d.join("ing/fits.json"))).unwrap();
    assert_eq!(fits["isotherms"].as_array().unwrap().len(), 90);
    assert!(fits["aggregated"]["cells"].as_array().unwrap().len() >= 3);

    ok(d, &["thermo", "--fits", "ing/fits.json", "--out", "th/thermo.json"]);
    let th: serde_json::Value = serde_json::from_str(&read(d.join("th/thermo.json"))).unwrap();
    let samples = th["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 30);
    let truth: serde_json::Value = serde_json::from_str(&read(d.join("syn/truth.json"))).unwrap();
    let true_dh: std::collections::BTreeMap<&str, f64> = truth["samples"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| (s["sample_key"].as_str().unwrap(), s["dh"].as_f64().unwrap()))
        .collect();
    let mut rel: Vec<f64> = samples
        .iter()
        .map(|s| {
            let dh = s["params"]["dh"].as_f64().unwrap();
            let t = true_dh[s["sample_key"].as_str().unwrap()];
            ((dh - t) / t).abs()
        })
        .collect();
    rel.sort_by(f64::total_cmp);
    assert!(rel[rel.len() / 2] < 0.25, "median relative dH error {}", rel[rel.len() / 2]);
    assert!(read(d.join("th/isosteric.csv")).starts_with("sample_key,coverage,q_st\n"));

    ok(d, &["featurize", "--in", "ing", "--select", "20", "--out", "feat"]);
    let header = read(d.join("feat/train.csv")).lines().next().unwrap().to_string();
    let report: serde_json::Value = serde_json::from_str(&read(d.join("feat/report.json"))).unwrap();
    let n_selected = report["n_selected"].as_u64().unwrap() as usize;
    assert!((1..=20).contains(&n_selected));
    assert_eq!(header.split(',').count(), 5 + n_selected);

    ok(d, &["train", "--features", "feat", "--members", "2", "--epoch-scale", "0.004", "--out", "model"]);
    for f in ["manifest.json", "member_0.json", "member_1.json", "history_0.csv", "calibration.json", "pipeline.json"] {
        assert!(d.join("model").join(f).exists(), "{f}");
    }

    ok(d, &["predict", "--ensemble", "model/manifest.json", "--in", "feat/test_isotherms.csv", "--out", "pred/preds.csv"]);
    let preds = read(d.join("pred/preds.csv"));
    let mut lines = preds.lines();
    assert_eq!(lines.next().unwrap(), "sample_key,lithology,pressure_bar,temperature_K,mean,sigma_cal,lo,hi");
    let test_rows = read(d.join("feat/test_isotherms.csv")).lines().count() - 1;
    assert_eq!(lines.count(), test_rows);

    ok(d, &["evaluate", "--preds", "pred/preds.csv", "--truth", "feat/test_isotherms.csv", "--out", "pred/metrics.json"]);
    let m: serde_json::Value = serde_json::from_str(&read(d.join("pred/metrics.json"))).unwrap();
    assert_eq!(m["n"].as_u64().unwrap() as usize, test_rows);
    assert!(m["uq"].is_object());
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let spec = small_spec(d);
    for out in ["a", "b"] {
        ok(d, &["--seed", "11", "synth", "--spec", spec.to_str().unwrap(), "--out", out]);
        ok(d, &["fit", "--in", out, "--forms", "langmuir,toth", "--boot", "5", "--cv", "0"]);
    }
    for f in ["isotherms.csv", "properties.csv", "truth.json", "fits.json"] {
        assert_eq!(read(d.join("a").join(f)), read(d.join("b").join(f)), "{f}");
    }
    ok(d, &["--seed", "12", "synth", "--spec", spec.to_str().unwrap(), "--out", "c"]);
    assert_ne!(read(d.join("a/isotherms.csv")), read(d.join("c/isotherms.csv")));
}

#[test]
fn seed_comes_from_environment_when_flag_absent() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = bin().current_dir(d).env("SORBFIT_SEED", "77").args(["synth", "--out", "s"]).output().unwrap();
    assert!(out.status.success());
    let cfg: serde_json::Value = serde_json::from_str(&read(d.join("s/config.json"))).unwrap();
    assert_eq!(cfg["run_config"]["seed"], 77);
    assert_eq!(cfg["command"], "synth");
    assert!(cfg["version"].is_string());
}

#[test]
fn unknown_flag_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["fit", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["exit_code"], 1);
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("cfg.json"), r#"{"seed": 3, "learning_rate": 0.1}"#).unwrap();
    let out = run(d, &["--config", "cfg.json", "synth", "--out", "s"]);
    assert_eq!(out.status.code(), Some(1));
    let e = stderr_json(&out);
    assert_eq!(e["error"], "validation");
    assert!(e["message"].as_str().unwrap().contains("learning_rate"));
    assert!(!d.join("s").exists());
}

#[test]
fn config_file_sets_the_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("cfg.json"), r#"{"seed": 3}"#).unwrap();
    ok(d, &["--config", "cfg.json", "synth", "--out", "s"]);
    let cfg: serde_json::Value = serde_json::from_str(&read(d.join("s/config.json"))).unwrap();
    assert_eq!(cfg["run_config"]["seed"], 3);
}

#[test]
fn missing_input_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &["ingest", "--isotherms", "nope.csv", "--properties", "nope2.csv", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "io");
}

#[test]
fn bad_arguments_are_validation_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(run(d, &["synth", "--spec", "no_such_preset", "--out", "s"]).status.code(), Some(1));
    ok(d, &["synth", "--spec", "heterogeneous", "--out", "s"]);
    assert_eq!(run(d, &["fit", "--in", "s", "--forms", "langmuir,unicorn"]).status.code(), Some(1));
    assert_eq!(run(d, &["--threads", "0", "synth", "--out", "t"]).status.code(), Some(1));
    let out = run(d, &["predict", "--ensemble", "m.json", "--in", "x.csv", "--level", "1.5", "--out", "p.csv"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn malformed_rows_land_in_the_reject_file() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--out", "s"]);
    let mut iso = read(d.join("s/isotherms.csv"));
    iso.push_str("clay_001,clay,-4,298.15,0.1\n");
    std::fs::write(d.join("s/isotherms.csv"), iso).unwrap();
    ok(d, &["ingest", "--isotherms", "s/isotherms.csv", "--properties", "s/properties.csv", "--out", "i"]);
    let rejects = read(d.join("i/rejects_isotherms.csv"));
    assert_eq!(rejects.lines().count(), 2, "{rejects}");
}

#[test]
fn unparseable_number_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--out", "s"]);
    let mut iso = read(d.join("s/isotherms.csv"));
    iso.push_str("clay_001,clay,abc,298.15,0.1\n");
    std::fs::write(d.join("s/isotherms.csv"), iso).unwrap();
    let out = run(d, &["ingest", "--isotherms", "s/isotherms.csv", "--properties", "s/properties.csv", "--out", "i"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_json(&out)["message"].as_str().unwrap().contains("pressure_bar"));
}

#[test]
fn help_and_version_exit_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let help = run(tmp.path(), &["--help"]);
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8_lossy(&help.stdout);
    for sub in ["synth", "ingest", "fit", "thermo", "featurize", "train", "predict", "evaluate", "reproduce"] {
        assert!(text.contains(sub), "{sub}");
    }
    assert_eq!(run(tmp.path(), &["--version"]).status.code(), Some(0));
}
