use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const FLAT: &str = r#"{"model": {"family": "Mechanical"}, "grid": {"nx": 32, "nt": 8},
  "stochastic": {"n_paths": 200, "exit_paths": 200, "kappa": 5.0, "lax_kappa": 0.5}}"#;

fn run(dir: &Path, config: &str, command: &str, extra: &[&str]) -> (Output, PathBuf) {
    let cfg = dir.join("config.json");
    fs::write(&cfg, config).unwrap();
    let out = dir.join("out");
    let output = Command::new(env!("CARGO_BIN_EXE_weakkam"))
        .args(["--config", cfg.to_str().unwrap(), "--command", command, "--out", out.to_str().unwrap()])
        .args(extra)
        .output()
        .unwrap();
    (output, out)
}

fn find(dir: &Path, prefix: &str, ext: &str) -> PathBuf {
    let mut hits: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            let name = p.file_name().unwrap().to_str().unwrap();
            name.starts_with(prefix) && name.ends_with(ext) && !name.ends_with(".verdict.json")
        })
        .collect();
    assert_eq!(hits.len(), 1, "{prefix}*{ext} in {}", dir.display());
    hits.pop().unwrap()
}

fn payload(path: &Path) -> Value {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v.as_object_mut().unwrap().remove("wall_times");
    v
}

#[test]
fn critical_on_flat_model_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = run(tmp.path(), FLAT, "critical", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = payload(&find(&out, "critical_", ".json"));
    assert_eq!(v["body"]["results"]["c"].as_f64(), Some(0.0));
    assert_eq!(v["body"]["verdict"], "PASS");
}

#[test]
fn increasing_eps_list_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"{"model": {"family": "Mechanical"}, "sweep": {"eps_list": [0.005, 0.01]}}"#;
    let (o, _) = run(tmp.path(), cfg, "sweep", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sweep.eps_list"));
}

#[test]
fn schema_violation_exits_one_with_path() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"{"model": {"family": "Mechanical"}, "grid": {"nx": "many"}}"#;
    let (o, _) = run(tmp.path(), cfg, "critical", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid.nx"));
}

#[test]
fn unknown_family_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, _) = run(tmp.path(), r#"{"model": {"family": "Relativistic"}}"#, "critical", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model"));
}

#[test]
fn unknown_command_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, _) = run(tmp.path(), FLAT, "everything", &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn example_needs_traveling_wave() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, _) = run(tmp.path(), FLAT, "example", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.family"));
}

#[test]
fn repeated_runs_give_identical_payloads() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (oa, out_a) = run(a.path(), FLAT, "all", &["--workers", "1"]);
    let (ob, out_b) = run(b.path(), FLAT, "all", &["--workers", "1"]);
    assert_eq!(oa.status.code(), ob.status.code());
    for stage in ["orbits", "critical", "barrier", "viscous", "sweep", "rescale", "stochastic"] {
        let pa = find(&out_a, &format!("{stage}_"), ".json");
        let pb = find(&out_b, &format!("{stage}_"), ".json");
        assert_eq!(pa.file_name(), pb.file_name());
        assert_eq!(payload(&pa), payload(&pb), "{stage}");
    }
    for stage in ["viscous", "sweep", "stochastic"] {
        let ca = fs::read(find(&out_a, &format!("{stage}_"), ".csv")).unwrap();
        let cb = fs::read(find(&out_b, &format!("{stage}_"), ".csv")).unwrap();
        assert_eq!(ca, cb, "{stage}");
    }
}

#[test]
fn csv_headers_are_fixed() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = run(tmp.path(), FLAT, "all", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let header = |stage: &str| {
        let text = fs::read_to_string(find(&out, &format!("{stage}_"), ".csv")).unwrap();
        text.lines().next().unwrap().to_string()
    };
    assert_eq!(header("viscous"), "x_index,t_index,x,t,phi");
    assert_eq!(header("sweep"), "epsilon,c_eps,secant,limit_error,grad_error,lip_x,semiconvexity_const");
    assert_eq!(header("stochastic"), "epsilon,n_paths,mean_tau,ci_low,ci_high,eps_log_mean_tau,capped_fraction");

    let cfg = r#"{"model": {"family": "Mechanical", "potential": {"terms": [[0, -0.5, 0.0], [2, 0.5, 0.0]]}},
      "grid": {"nx": 32, "nt": 8}}"#;
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = run(tmp.path(), cfg, "barrier", &[]);
    assert!(matches!(o.status.code(), Some(0 | 2)), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(find(&out, "barrier_", ".csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "x_index,t_index,x,t,h,phi_pot");
    assert_eq!(text.lines().count(), 1 + 32 * 8);
}

#[test]
fn hash_tracks_numeric_fields() {
    let hash_of = |cfg: &str| {
        let tmp = tempfile::tempdir().unwrap();
        let (o, out) = run(tmp.path(), cfg, "critical", &[]);
        assert_eq!(o.status.code(), Some(0));
        let v = payload(&find(&out, "critical_", ".json"));
        v["config_hash"].as_str().unwrap().to_string()
    };
    let base = hash_of(FLAT);
    assert_eq!(base, hash_of(FLAT));
    for changed in [
        FLAT.replace("\"nx\": 32", "\"nx\": 33"),
        FLAT.replace("\"kappa\": 5.0", "\"kappa\": 5.5"),
        FLAT.replace("\"n_paths\": 200", "\"n_paths\": 201"),
        FLAT.replace("\"grid\"", "\"numerics\": {\"cell_tol\": 2e-8}, \"grid\""),
    ] {
        assert_ne!(base, hash_of(&changed), "{changed}");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = run(tmp.path(), FLAT, "stochastic", &["--seed", "99"]);
    assert_eq!(o.status.code(), Some(0));
    let v = payload(&find(&out, "stochastic_", ".json"));
    assert_eq!(v["config"]["stochastic"]["seed"].as_u64(), Some(99));
}

#[test]
fn failing_check_exits_two_with_verdict_file() {
    // The finest grid here cannot resolve c(ε) - c(0) ≈ -λ̄ε within 1%.
    let cfg = r#"{"model": {"family": "Mechanical", "potential": {"terms": [[0, -0.5, 0.0], [2, 0.5, 0.0]]}},
      "grid": {"nx": 32, "nt": 8}, "numerics": {"slope_tol": 0.01}}"#;
    let tmp = tempfile::tempdir().unwrap();
    let (o, out) = run(tmp.path(), cfg, "sweep", &[]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stdout));
    let verdict = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_str().unwrap().ends_with(".verdict.json"))
        .unwrap();
    let v: Value = serde_json::from_str(&fs::read_to_string(verdict).unwrap()).unwrap();
    assert_eq!(v["body"]["verdict"], "FAIL");
    assert!(v["body"]["failed"].as_array().unwrap().iter().any(|f| f == "sweep.slope"));
}

#[test]
fn unwritable_output_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let cfg = tmp.path().join("config.json");
    fs::write(&cfg, FLAT).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_weakkam"))
        .args(["--config", cfg.to_str().unwrap(), "--command", "critical", "--out"])
        .arg(blocker.join("sub"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}
