use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[model]
builtin = "power_law"
l = 1.0

[run]
T = [0.5]
z0 = [[1.0, 0.5]]
v = [[1.0, 0.0], [0.0, 1.0]]
functions = ["y_squared", "sin_y"]
n_paths = 2000
n_steps = 20
master_seed = 99

[suite]
checks = ["bismut-vs-fd", "reduction"]

[output]
formats = ["csv", "json", "markdown"]
"#;

fn gruschin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gruschin"))
        .args(args)
        .env_remove("GRUSCHIN_OUT")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("cfg.toml");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn list_builtins_names_catalogue() {
    let out = gruschin(&["list-builtins"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["power_law", "constant_identity", "extended_demo", "y_squared", "one_plus_tanh_y"] {
        assert!(text.contains(name), "missing {name}");
    }
}

#[test]
fn run_writes_all_formats() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out_dir = tmp.path().join("out");
    let out = gruschin(&["run", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("PASS bismut-vs-fd"), "{stdout}");
    assert!(stdout.contains("PASS reduction"), "{stdout}");

    let csv = std::fs::read_to_string(out_dir.join("results.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(
        header,
        "experiment_id,quantity,mean,stderr,n_valid,n_invalid,seed,T,z0,v,n_steps"
    );
    assert!(csv.lines().any(|l| l.contains("bismut:")));
    assert!(csv.lines().any(|l| l.contains("fd:")));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("results.json")).unwrap()).unwrap();
    assert!(json.is_object() || json.is_array());
    assert!(out_dir.join("report.md").exists());
}

#[test]
fn missing_seed_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &SMALL.replace("master_seed = 99", ""));
    let out = gruschin(&["run", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("master_seed"));
}

#[test]
fn worker_count_does_not_change_results() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let mut csvs = Vec::new();
    for w in ["1", "8"] {
        let dir = tmp.path().join(format!("w{w}"));
        let out = gruschin(&["run", &cfg, "--workers", w, "--out", dir.to_str().unwrap()]);
        assert!(out.status.success());
        csvs.push(std::fs::read(dir.join("results.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn dump_paths_writes_audit_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = gruschin(&["dump-paths", &cfg, "--out", tmp.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("paths.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("path_index,"));
    assert_eq!(lines.count(), 2000);
}
