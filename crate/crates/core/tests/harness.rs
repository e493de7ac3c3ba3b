use std::fs;

use sha2::{Digest, Sha256};

use superbrownian::harness::format::read_paths;
use superbrownian::{run, Error, Experiment, ExperimentConfig, MeasurePath};

fn smoke() -> ExperimentConfig {
    ExperimentConfig::smoke()
}

#[test]
fn smoke_full_suite_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let outcome = run(&smoke(), dir.path()).unwrap();
    assert!(!outcome.gates.is_empty());
    for f in
        ["mass.csv", "martingale.csv", "isometry.csv", "vderiv.csv", "coefficients.csv", "adjoint.csv", "gates.csv"]
    {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    let files = manifest["files"].as_array().unwrap();
    assert!(files.len() >= 9);
    for f in files {
        let bytes = fs::read(dir.path().join(f["name"].as_str().unwrap())).unwrap();
        let hex: String = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(f["sha256"].as_str().unwrap(), hex);
        assert_eq!(f["bytes"].as_u64().unwrap(), bytes.len() as u64);
    }
    let gates = fs::read_to_string(dir.path().join("gates.csv")).unwrap();
    assert_eq!(gates.lines().count(), outcome.gates.len() + 1);
}

#[test]
fn same_seed_same_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(&smoke(), a.path()).unwrap();
    run(&smoke(), b.path()).unwrap();
    for f in
        ["mass.csv", "martingale.csv", "isometry.csv", "vderiv.csv", "coefficients.csv", "gates.csv", "summary.json"]
    {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn written_paths_read_back() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = smoke();
    cfg.experiment = Experiment::Simulate;
    cfg.replicates = 3;
    run(&cfg, dir.path()).unwrap();
    let paths: Vec<MeasurePath<f64>> = read_paths(&dir.path().join("paths")).unwrap();
    assert_eq!(paths.len(), 3);
    let params = cfg.sim_params().unwrap();
    for (i, p) in paths.iter().enumerate() {
        let fresh = superbrownian::simulate_replicate(&cfg.initial_measure().unwrap(), &params, i as u64).unwrap();
        assert_eq!(p.events().times(), fresh.events().times());
        assert_eq!(p.events().flat_positions(), fresh.events().flat_positions());
        assert_eq!(p.total_masses(), fresh.total_masses());
    }
}

#[test]
fn config_file_drives_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
experiment = "verify-mp"
horizon = 0.2
step = 0.01
resolution = 40
replicates = 4
seed = 5

[[initial.atoms]]
position = [0.0]
mass = 0.5

[[initial.atoms]]
position = [1.0]
mass = 0.5

[[test_functions]]
family = "hermite"
center = [0.0]
width = 1.0
orders = [2]
"#;
    let file = dir.path().join("c.toml");
    fs::write(&file, text).unwrap();
    let cfg = ExperimentConfig::load(&file).unwrap();
    let outcome = run(&cfg, &dir.path().join("out")).unwrap();
    assert_eq!(outcome.gates.iter().filter(|g| g.name.starts_with("mp[0]")).count(), 6);
    assert!(!dir.path().join("out/isometry.csv").exists());
}

#[test]
fn unknown_experiment_is_a_config_error() {
    let text = "experiment = \"everything\"\nhorizon = 1.0\nstep = 0.01\nresolution = 10\nreplicates = 2\n";
    match ExperimentConfig::from_toml(text) {
        Err(Error::Config { field, .. }) => assert_eq!(field, "experiment"),
        other => panic!("{other:?}"),
    }
}
