use serde_json::Value;
use std::path::Path;
use std::process::{Command, Output};

fn khm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_khm"))
        .args(args)
        .arg("--output")
        .arg(dir)
        .env_remove("KHM_CONFIG")
        .output()
        .expect("spawn khm")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn verify_constants_reports_the_law_constants() {
    let dir = tempfile::tempdir().unwrap();
    let o = khm(dir.path(), &["verify-constants", "--config", "default"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = json(&dir.path().join("constants.json"));
    assert_eq!(v["pass"], true);
    let expected: Vec<f64> = v["profiles"][0]["entries"].as_array().unwrap().iter().map(|e| e["expected"].as_f64().unwrap()).collect();
    for c in [-15.0 / 8.0, -9.0 / 4.0, -5.0 / 4.0] {
        assert!(expected.contains(&c), "{c} missing");
    }
    assert!(dir.path().join("manifest-verify-constants.json").is_file());
    assert!(dir.path().join("config-verify-constants.resolved").is_file());
}

#[test]
fn abc_simulation_has_flat_invariants() {
    let dir = tempfile::tempdir().unwrap();
    let o = khm(
        dir.path(),
        &[
            "simulate",
            "--set",
            "solver.model=emhd",
            "--set",
            "ic.kind=abc",
            "--set",
            "grid.n=8",
            "--set",
            "solver.t_end=0.05",
            "--set",
            "solver.dt=0.01",
            "--set",
            "solver.snapshot_interval=0.05",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let ledger = std::fs::read_to_string(dir.path().join("ledger.csv")).unwrap();
    let mut lines = ledger.lines();
    assert_eq!(lines.next().unwrap(), "t,E,H_M,H_G,H_C,eps_E");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert!((r[1] - rows[0][1]).abs() < 1e-12 * rows[0][1]);
        assert!((r[2] - rows[0][2]).abs() < 1e-12 * rows[0][2].abs());
    }
    let snaps: Vec<_> = std::fs::read_dir(dir.path().join("snapshots")).unwrap().collect();
    assert_eq!(snaps.len(), 2);
}

#[test]
fn invalid_config_exits_with_key_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let o = khm(dir.path(), &["simulate", "--set", "solver.model=mhd", "--set", "solver.bogus=1"]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("solver.model") && e.contains("solver.bogus"), "{e}");
    assert!(!dir.path().join("ledger.csv").exists());

    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "kernel.epsilon = 0.5\nquad.directions = many\n").unwrap();
    let o = khm(dir.path(), &["verify-constants", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.cfg:2"));
}

#[test]
fn tolerance_failure_has_its_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = khm(dir.path(), &["verify-constants", "--set", "tolerances.constants=0"]);
    // Rounding leaves some constants off by a few ulps; a zero tolerance must fail.
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let v = json(&dir.path().join("constants.json"));
    assert_eq!(v["pass"], false);
}

#[test]
fn config_file_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("env.cfg");
    std::fs::write(&cfg, "kernel.profile = gaussian\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_khm"))
        .args(["verify-constants", "--output"])
        .arg(dir.path())
        .env("KHM_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let resolved = std::fs::read_to_string(dir.path().join("config-verify-constants.resolved")).unwrap();
    assert!(resolved.contains("kernel.profile = gaussian"));
}

#[test]
fn deterministic_estimates_are_byte_identical() {
    let base = tempfile::tempdir().unwrap();
    let sim = base.path().join("sim");
    let o = khm(
        &sim,
        &[
            "simulate",
            "--set",
            "solver.model=hallmhd",
            "--set",
            "grid.n=16",
            "--set",
            "solver.t_end=0.02",
            "--set",
            "solver.dt=0.01",
            "--set",
            "solver.snapshot_interval=0.02",
            "--set",
            "ic.seed=5",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let d = base.path().join(run);
        let o = khm(
            &d,
            &[
                "estimate",
                "--deterministic",
                "--input",
                sim.join("snapshots").to_str().unwrap(),
                "--set",
                "quad.directions=32",
                "--set",
                "quad.radial_nodes=8",
                "--set",
                "kernel.epsilon=1.0",
                "--set",
                "scan.lambda_min=0.5",
                "--set",
                "scan.lambda_max=1.0",
                "--set",
                "scan.lambda_count=2",
            ],
        );
        assert!(o.status.success(), "{}", stderr(&o));
        outputs.push(std::fs::read(d.join("estimates.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs[0].clone()).unwrap();
    assert!(text.starts_with("t,lambda,direction_count,value,estimator_name\n"));
    // two snapshots × two separations × ten estimators
    assert_eq!(text.lines().count(), 1 + 2 * 2 * 10);
}

#[test]
fn report_aggregates_and_checks_manifests() {
    let dir = tempfile::tempdir().unwrap();
    assert!(khm(dir.path(), &["verify-constants"]).status.success());
    let sub = dir.path().join("sim");
    let o = khm(
        &sub,
        &["simulate", "--set", "ic.kind=abc", "--set", "grid.n=8", "--set", "solver.t_end=0.01", "--set", "solver.dt=0.01"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = khm(dir.path(), &["report"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = json(&dir.path().join("summary.json"));
    assert_eq!(v["pass"], true);
    assert_eq!(v["gates"].as_array().unwrap().len(), 2);
    assert_eq!(v["manifests_ok"], true);

    std::fs::write(sub.join("ledger.csv"), "tampered\n").unwrap();
    let o = khm(dir.path(), &["report"]);
    assert_eq!(o.status.code(), Some(3));
    let v = json(&dir.path().join("summary.json"));
    assert_eq!(v["manifests_ok"], false);
}

#[test]
fn scan_and_audit_run_from_snapshot_files() {
    let base = tempfile::tempdir().unwrap();
    let sim = base.path().join("sim");
    let o = khm(
        &sim,
        &[
            "simulate",
            "--set",
            "grid.n=16",
            "--set",
            "solver.t_end=0.02",
            "--set",
            "solver.dt=0.01",
            "--set",
            "solver.snapshot_interval=0.01",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let scan = base.path().join("scan");
    let o = khm(
        &scan,
        &[
            "scan-laws",
            "--input",
            sim.to_str().unwrap(),
            "--set",
            "quad.directions=32",
            "--set",
            "scan.lambda_min=0.5",
            "--set",
            "scan.lambda_max=1.0",
            "--set",
            "scan.lambda_count=3",
        ],
    );
    // A smooth inviscid run has no plateau: the gate reports failure but the outputs exist.
    assert!(matches!(o.status.code(), Some(0) | Some(3)), "{}", stderr(&o));
    let v = json(&scan.join("plateau.json"));
    assert_eq!(v["ledger_found"], true);
    let laws_csv = std::fs::read_to_string(scan.join("laws.csv")).unwrap();
    assert!(laws_csv.starts_with("t,model,lambda,S_EL,S_ET,S_EL_bar,S_ET_bar,S_E_bar,S_ML,S_MT,S_HL,Pi_L,Pi_T\n"));
    assert_eq!(laws_csv.lines().count(), 1 + 3 * 3);

    let audit = base.path().join("audit");
    let o = khm(
        &audit,
        &["audit-khm", "--input", sim.join("snapshots").to_str().unwrap(), "--set", "kernel.epsilon=1.0", "--set", "quad.directions=64"],
    );
    assert!(matches!(o.status.code(), Some(0) | Some(3)), "{}", stderr(&o));
    let v = json(&audit.join("audit.json"));
    assert_eq!(v["audits"].as_array().unwrap().len(), 2 * 4);
}
