use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn bktrg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bktrg"))
        .args(args)
        .env_remove("BKTRG_Z")
        .env_remove("BKTRG_CONFIG")
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("bktrg-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn empty_command_prints_usage_and_exits_2() {
    let out = bktrg(&[]);
    assert_eq!(out.status.code(), Some(2));
    let text = String::from_utf8_lossy(&out.stderr) + String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("Usage"));
}

#[test]
fn separatrix_reports_beta_above_marginal() {
    let out = bktrg(&["separatrix", "--L", "16", "--z", "1e-3"]);
    assert!(out.status.success());
    let v = json(&out);
    let beta = v["result"]["beta_bkt"].as_f64().unwrap();
    assert!(beta > 8.0 * std::f64::consts::PI);
    assert_eq!(v["metadata"]["code_version"], bktrg::CODE_VERSION);
}

#[test]
fn coeffs_b_column_tends_to_two_ln_l() {
    let out = bktrg(&["coeffs", "--L", "16", "--jmax", "8", "--eta", "0.5"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("# command=coeffs\n"));
    let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "j,a,b,m11,m22,m12,m21,E2,E3,E4");
    let last: Vec<f64> = text.lines().last().unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    assert_eq!(last[0], 8.0);
    assert!((last[2] / (2.0 * 16f64.ln()) - 1.0).abs() < 1e-6);
}

#[test]
fn module_errors_are_json_with_nonzero_exit() {
    let out = bktrg(&["flow", "--eta", "1.5"]);
    assert_eq!(out.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"]["kind"], "config");
    assert_eq!(v["command"], "flow");

    let out = bktrg(&["potential", "--L", "4"]);
    assert_eq!(out.status.code(), Some(1));
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"]["kind"], "spec");
}

#[test]
fn identical_configs_give_identical_bytes() {
    let args = ["oracle", "--mode", "mc", "--samples", "4000"];
    let (a, b) = (bktrg(&args), bktrg(&args));
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn config_file_env_and_flag_precedence() {
    let dir = scratch("precedence");
    let file = dir.join("run.cfg");
    std::fs::write(&file, "# test\nL = 8\nz = 2e-3\njmax = 60\n").unwrap();
    let run = |extra: &[&str], env: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_bktrg"));
        c.args(["separatrix", "--config", file.to_str().unwrap()]).args(extra).env_remove("BKTRG_Z");
        if let Some(z) = env {
            c.env("BKTRG_Z", z);
        }
        json(&c.output().unwrap())
    };
    let v = run(&[], None);
    assert_eq!(v["metadata"]["L"], "8");
    assert_eq!(v["metadata"]["z"], "2e-3");
    assert_eq!(run(&[], Some("3e-3"))["metadata"]["z"], "3e-3");
    assert_eq!(run(&["--z", "4e-3"], Some("3e-3"))["metadata"]["z"], "4e-3");
}

#[test]
fn golden_registry_bless_and_mismatch() {
    let dir = scratch("golden");
    let reg = dir.join("registry.json");
    let reg_s = reg.to_str().unwrap();
    let args = ["coeffs", "--jmax", "3", "--golden", reg_s];
    assert!(bktrg(&args).status.success());
    assert!(!reg.exists());

    let mut bless = args.to_vec();
    bless.push("--bless");
    assert!(bktrg(&bless).status.success());
    let text = std::fs::read_to_string(&reg).unwrap();
    assert!(text.contains("\"coeffs:"));
    assert!(bktrg(&args).status.success());

    let v: Value = serde_json::from_str(&text).unwrap();
    let key = v.as_object().unwrap().keys().next().unwrap().clone();
    let sha = v[&key]["sha256"].as_str().unwrap().to_string();
    std::fs::write(&reg, text.replace(&sha, &"0".repeat(64))).unwrap();
    let out = bktrg(&args);
    assert_eq!(out.status.code(), Some(3));
    let e: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(e["error"]["kind"], "golden");
}

#[test]
fn out_directory_receives_the_artifact() {
    let dir = scratch("out");
    let out = bktrg(&["phase-diagram", "--n_s", "2", "--n_z", "2", "--ell_end", "1", "--out", dir.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(dir.join("phase_diagram.csv")).unwrap();
    assert!(text.contains("# command=phase-diagram"));
    assert!(text.lines().any(|l| l == "orbit,s0,z0,ell,s,z,invariant"));
}

#[test]
fn checked_in_golden_values_reproduce() {
    let reg = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../golden/registry.json");
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&reg).unwrap()).unwrap();
    for (key, entry) in v.as_object().unwrap() {
        let mut args =
            vec![entry["command"].as_str().unwrap().to_string(), "--golden".into(), reg.display().to_string()];
        for (k, val) in entry["config"].as_object().unwrap() {
            args.push(format!("--{k}"));
            args.push(val.as_str().unwrap().to_string());
        }
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = bktrg(&refs);
        assert!(out.status.success(), "{key}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
