use std::path::Path;
use std::process::{Command, Output};

use ph2d_core::FieldDump;
use serde_json::{json, Value};

fn ph2d(args: &[&str], config: &Value, out: &Path) -> Output {
    let cfg = out.with_extension("json");
    std::fs::write(&cfg, config.to_string()).unwrap();
    Command::new(env!("CARGO_BIN_EXE_ph2d"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(out)
        .env_remove("PH2D_THREADS")
        .output()
        .expect("binary runs")
}

fn small_solve() -> Value {
    json!({
        "schema_version": 1,
        "geometry": { "nx": 16, "perforation": { "epsilon": 0.5, "alpha": 2.1, "delta": 0.04 } },
        "solver": { "t_end": 0.02, "samples": 4 },
        "output": { "field_dumps": true }
    })
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).expect("error is JSON")
}

#[test]
fn gamma_two_study_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "schema_version": 1,
        "geometry": { "nx": 16 },
        "fluid": { "gamma": 2.0 },
        "study": { "epsilons": [0.5], "mode": { "paper": { "alpha": 2.1, "delta": 0.04 } } }
    });
    let o = ph2d(&["study"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_json(&o);
    assert_eq!(e["exit_code"], 2);
    assert!(e["message"].as_str().unwrap().contains("gamma > 2"), "{e}");
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({ "schema_version": 1, "solver": { "t_end": 0.1, "tend": 0.2 } });
    let o = ph2d(&["solve"], &cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_json(&o)["message"].as_str().unwrap().contains("tend"));
}

#[test]
fn hole_free_cutoff_audit_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = ph2d(&["cutoff-audit"], &json!({ "schema_version": 1 }), &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("cutoff_norms.csv")).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |n: &str| header.iter().position(|h| *h == n).unwrap();
    let (cf, qd) = (col("closed_form"), col("quadrature"));
    let mut rows = 0;
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        assert_eq!(f[cf].parse::<f64>().unwrap(), 0.0, "{l}");
        assert_eq!(f[qd].parse::<f64>().unwrap(), 0.0, "{l}");
        rows += 1;
    }
    assert!(rows > 0);
}

#[test]
fn field_dumps_round_trip_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = ph2d(&["solve", "--strict-deterministic"], &small_solve(), &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["rho.ph2d", "mx.ph2d", "my.ph2d"] {
        let bytes = std::fs::read(out.join(name)).unwrap();
        let d = FieldDump::read(&out.join(name)).unwrap();
        assert_eq!(d.to_bytes(), bytes, "{name}");
        assert!(d.payload.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn strict_runs_are_byte_identical_and_verifiable() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = ph2d(&["solve", "--strict-deterministic", "--seed", "3"], &small_solve(), out);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let names: Vec<String> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert!(names.contains(&"manifest.json".to_string()));
    for n in &names {
        assert_eq!(std::fs::read(a.join(n)).unwrap(), std::fs::read(b.join(n)).unwrap(), "{n}");
    }
    let m: Value = serde_json::from_slice(&std::fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert!(m.get("wall_time_s").is_none());
    assert_eq!(m["threads"], 1);

    let report = Command::new(env!("CARGO_BIN_EXE_ph2d")).args(["report", "--out"]).arg(&a).output().unwrap();
    assert!(report.status.success());
    let r: Value = serde_json::from_slice(&report.stdout).unwrap();
    assert_eq!(r["all_ok"], true);

    std::fs::write(a.join("ledger.csv"), "tampered\n").unwrap();
    let report = Command::new(env!("CARGO_BIN_EXE_ph2d")).args(["report", "--out"]).arg(&a).output().unwrap();
    assert_eq!(report.status.code(), Some(2));
}

#[test]
fn gen_domain_writes_mask_and_centers() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = json!({
        "schema_version": 1,
        "geometry": { "nx": 32, "perforation": { "epsilon": 0.25, "alpha": 2.1, "delta": 0.04 } }
    });
    let o = ph2d(&["gen-domain"], &cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mask = FieldDump::read(&out.join("mask.ph2d")).unwrap();
    assert_eq!(mask.payload.len(), 32 * 32);
    let centers = std::fs::read_to_string(out.join("centers.csv")).unwrap();
    assert!(centers.lines().filter(|l| !l.starts_with('#')).count() > 1);
}
