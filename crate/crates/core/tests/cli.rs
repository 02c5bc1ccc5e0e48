use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn torsion_config(dir: &Path, h: f64) -> Value {
    json!({
        "problem": {
            "p": 2.0,
            "norm": {"kind": "euclidean"},
            "weight": {"kind": "constant"},
            "cone": {"kind": "full_plane"},
            "R": 1.0,
            "f": {"law": {"kind": "constant", "c0": 1.0}}
        },
        "mesh": {"h": h},
        "output": {"directory": dir.join("out")}
    })
}

fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn wulff_lab(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wulff-lab"))
        .args(args)
        .arg("--config")
        .arg(config)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn verify_torsion_passes_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &torsion_config(dir.path(), 0.04));
    let o = wulff_lab(&["verify"], &cfg);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("out");
    for f in ["solution.csv", "solve.json", "levels.csv", "verify.json", "contours.svg", "mesh"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let v: Value = serde_json::from_str(&std::fs::read_to_string(out.join("verify.json")).unwrap()).unwrap();
    assert!((v["M"].as_f64().unwrap() - 0.25).abs() < 5e-3);
    assert!(v["failing"].as_array().unwrap().is_empty());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("all diagnostics within tolerance"));
}

#[test]
fn failed_condition_b_certificate_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = torsion_config(dir.path(), 0.05);
    cfg["problem"]["p"] = json!(1.5);
    cfg["problem"]["f"] = json!({"law": {"kind": "power", "q": 1.0}, "comparison": {"kind": "constant", "value": 0.1}});
    let path = write_config(dir.path(), &cfg);
    let o = wulff_lab(&["solve"], &path);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("condition (b)"), "{}", stderr(&o));
}

#[test]
fn malformed_and_missing_configs_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = torsion_config(dir.path(), 0.05);
    cfg["mesh"]["unknown"] = json!(1);
    let o = wulff_lab(&["geom"], &write_config(dir.path(), &cfg));
    assert_eq!(o.status.code(), Some(2));
    let o = wulff_lab(&["geom"], &dir.path().join("absent.json"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn perturbed_solution_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &torsion_config(dir.path(), 0.04));
    assert_eq!(wulff_lab(&["solve"], &cfg).status.code(), Some(0));

    let csv = dir.path().join("out/solution.csv");
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    let mut edited = format!("{}\n", lines.next().unwrap());
    for line in lines {
        let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        let r2 = (v[0] - 0.3).powi(2) + v[1] * v[1];
        let u = v[2] + 0.05 * (1.0 - r2 / 0.16).max(0.0).powi(2);
        edited.push_str(&format!("{},{},{}\n", line.split(',').next().unwrap(), line.split(',').nth(1).unwrap(), u));
    }
    std::fs::write(&csv, edited).unwrap();

    let o = wulff_lab(&["verify"], &cfg);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
    assert!(stderr(&o).contains("holder_worst"), "{}", stderr(&o));
}

#[test]
fn iteration_cap_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = torsion_config(dir.path(), 0.05);
    cfg["solver"] = json!({"max_iter": 2, "eps_schedule": [0.1]});
    let o = wulff_lab(&["solve"], &write_config(dir.path(), &cfg));
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(dir.path().join("out/solution_unconverged.csv").exists());
}

#[test]
fn geom_quadrant_constant() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = torsion_config(dir.path(), 0.05);
    cfg["problem"]["cone"] = json!({"kind": "sector", "theta1": 0.0, "theta2": std::f64::consts::FRAC_PI_2});
    cfg["diagnostics"] = json!({"random_sets": 20});
    let o = wulff_lab(&["geom", "--seed", "7"], &write_config(dir.path(), &cfg));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/geom.json")).unwrap()).unwrap();
    assert!((v["constant"].as_f64().unwrap() - std::f64::consts::PI.sqrt()).abs() < 1e-2);
    assert_eq!(v["seed"], 7);
    assert_eq!(v["violations"], 0);
}

#[test]
fn runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (k, threads) in ["1", "3"].into_iter().enumerate() {
        let sub = dir.path().join(k.to_string());
        std::fs::create_dir_all(&sub).unwrap();
        let cfg = write_config(&sub, &torsion_config(&sub, 0.05));
        for cmd in ["geom", "verify"] {
            let o = Command::new(env!("CARGO_BIN_EXE_wulff-lab"))
                .args([cmd, "--config"])
                .arg(&cfg)
                .env("WULFF_LAB_THREADS", threads)
                .output()
                .unwrap();
            assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        }
        let read = |f: &str| std::fs::read(sub.join("out").join(f)).unwrap();
        outputs.push(["geom.json", "isoperimetry_sets.csv", "solution.csv", "levels.csv", "verify.json"].map(read));
    }
    assert!(outputs[0] == outputs[1]);
}

#[test]
fn out_flag_overrides_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &torsion_config(dir.path(), 0.05));
    let alt = dir.path().join("elsewhere");
    let o = Command::new(env!("CARGO_BIN_EXE_wulff-lab"))
        .args(["geom", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&alt)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(alt.join("geom.json").exists());
    assert!(!dir.path().join("out").exists());
}
