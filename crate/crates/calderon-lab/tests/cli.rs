use std::process::Command;

use calderon_lab::cli::{catalog_text, run_experiment, RunConfig, CATALOG};
use calderon_lab::experiments::ExperimentRecord;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_calderon-lab"))
}

#[test]
fn unknown_keys_are_rejected_by_name() {
    let err = RunConfig::parse("experiment = \"norm\"\nbogus_key = 3\n").unwrap_err().to_string();
    assert!(err.contains("bogus_key"), "{err}");
    let err = RunConfig::parse("[decay]\nn_maximum = 3\n").unwrap_err().to_string();
    assert!(err.contains("n_maximum"), "{err}");
    assert!(RunConfig::parse("experiment = \"nope\"").is_err());
    assert!(RunConfig::parse("length = 8.0\ntruncation = 5.0").is_err());
}

#[test]
fn config_round_trips_through_toml() {
    let mut cfg = RunConfig::parse("experiment = \"decay\"\nseed = 9\n[decay]\nn_max = 64\n").unwrap();
    assert_eq!(cfg.decay.n_max, 64);
    assert_eq!(cfg.growth, RunConfig::default().growth);
    cfg.truncation = Some(3.5);
    assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
}

#[test]
fn catalog_lists_every_experiment_in_order() {
    let ids: Vec<&str> = CATALOG.iter().map(|c| c.0).collect();
    assert_eq!(ids.len(), 10);
    assert_eq!(ids[0], "t1-identities");
    assert!(ids.contains(&"growth-in-d") && ids.contains(&"shift-log"));
    let text = catalog_text();
    let pos: Vec<usize> = ids.iter().map(|id| text.find(id).unwrap()).collect();
    assert!(pos.windows(2).all(|w| w[0] < w[1]));
    for id in ids {
        RunConfig::parse(&format!("experiment = \"{id}\"")).unwrap();
    }
}

#[test]
fn dotted_overrides_address_sections() {
    let ov = ["growth.d_max=3", "experiment=norm", "norm.operator=identity", "length=16.0"].map(String::from);
    let cfg = RunConfig::load(None, &ov).unwrap();
    assert_eq!(cfg.growth.d_max, 3);
    assert_eq!(cfg.experiment, "norm");
    assert_eq!(cfg.norm.operator, "identity");
    assert_eq!(cfg.length, 16.0);
    assert!(RunConfig::load(None, &["n".to_string()]).is_err());
    assert!(RunConfig::load(None, &["length.x=1".to_string()]).is_err());
}

#[test]
fn library_run_of_the_identity_norm() {
    let cfg = RunConfig::load(None, &["experiment=norm", "norm.operator=identity", "n=256", "length=16.0"].map(String::from))
        .unwrap();
    let art = run_experiment(&cfg).unwrap();
    assert!((art.record.estimate.unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn binary_lists_experiments() {
    let out = bin().arg("list-experiments").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), CATALOG.len());
}

#[test]
fn binary_rejects_unknown_overrides() {
    let out = bin().args(["run", "foo=1"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("foo"));
    let out = bin().args(["run", "--bogus-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn binary_runs_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--experiment", "lp-structure", "--no-plot", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("lp-structure.csv")).unwrap();
    assert!(csv.starts_with("schema_version,experiment,label,index,x,value"));
    let rec = ExperimentRecord::from_json(&std::fs::read_to_string(dir.path().join("lp-structure.json")).unwrap()).unwrap();
    assert!(rec.passed);
    assert!(!dir.path().join("lp-structure.svg").exists());
}

#[test]
fn binary_signals_a_missed_threshold() {
    // Grids this coarse are pre-asymptotic, so the refinement slope falls short.
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["run", "--experiment", "convergence", "--length", "64", "--n", "128", "--no-plot", "--out"])
        .arg(dir.path())
        .arg("convergence.ns=[16,32,64]")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(dir.path().join("convergence.json").exists());
}

#[test]
fn dump_config_prints_resolved_settings() {
    let out = bin().args(["dump-config", "--d-max", "4"]).output().unwrap();
    assert!(out.status.success());
    let cfg = RunConfig::parse(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg.growth.d_max, 4);
}
