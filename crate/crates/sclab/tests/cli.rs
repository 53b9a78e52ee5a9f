use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "scenario = \"full_synthetic\"\nbase_seed = 7\n[loop]\nmax_generation = 2\nreplicates = 2\nsample_size = 128\n";

fn sclab(args: &[&str], env_seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sclab"));
    cmd.args(args).env_remove("SCLAB_SEED").env_remove("RUST_LOG");
    if let Some(s) = env_seed {
        cmd.env("SCLAB_SEED", s);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn manifest_seed(out: &Path) -> i64 {
    let text = std::fs::read_to_string(out.join("manifest.toml")).unwrap();
    let doc: toml::Table = text.parse().unwrap();
    assert_eq!(doc["base_seed"], doc["manifest"]["seed"]);
    doc["manifest"]["seed"].as_integer().unwrap()
}

#[test]
fn run_writes_outputs_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let res = sclab(&["run", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for f in ["results.csv", "bounds.csv", "summary.csv", "manifest.toml"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert!(!out.join("error.json").exists());
    assert!(String::from_utf8_lossy(&res.stdout).contains("median TV by generation"));
}

#[test]
fn seed_precedence_is_flag_then_env_then_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = |name: &str| dir.path().join(name);
    let path = |name: &str| out(name).to_string_lossy().into_owned();

    assert!(sclab(&["run", "--config", &cfg, "--out", &path("plain")], None).status.success());
    assert_eq!(manifest_seed(&out("plain")), 7);
    assert!(sclab(&["run", "--config", &cfg, "--out", &path("env")], Some("123")).status.success());
    assert_eq!(manifest_seed(&out("env")), 123);
    assert!(sclab(&["run", "--config", &cfg, "--out", &path("flag"), "--seed", "55"], Some("123")).status.success());
    assert_eq!(manifest_seed(&out("flag")), 55);

    let results = |name: &str| std::fs::read(out(name).join("results.csv")).unwrap();
    assert_ne!(results("plain"), results("env"));
}

#[test]
fn replicates_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    assert!(sclab(&["run", "--config", &cfg, "--out", out.to_str().unwrap(), "--replicates", "3"], None).status.success());
    let text = std::fs::read_to_string(out.join("results.csv")).unwrap();
    // header plus 3 replicates of 2 generations
    assert_eq!(text.lines().count(), 1 + 6);
}

#[test]
fn config_errors_exit_two_with_a_json_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "scenario = \"full_synthetic\"\n[loop]\nmax_generation = 0\nsample_size = 5\ncolour = 1\n");
    let out = dir.path().join("out");
    let res = sclab(&["run", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(res.status.code(), Some(2));
    let record: serde_json::Value = serde_json::from_slice(res.stderr.trim_ascii()).unwrap();
    assert_eq!(record["kind"], "config");
    assert_eq!(record["exit_code"], 2);
    assert_eq!(record["errors"].as_array().unwrap().len(), 2);
    let on_disk: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("error.json")).unwrap()).unwrap();
    assert_eq!(on_disk, record);
}

#[test]
fn missing_output_directory_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let res = sclab(&["run", "--config", &cfg], None);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("no output directory"));
}

#[test]
fn runtime_failures_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    // a fourth-order kernel is signed and cannot be sampled from
    let cfg = write_config(
        dir.path(),
        "scenario = \"full_synthetic\"\n[generator]\norder = 4\n[loop]\nmax_generation = 2\nsample_size = 50\n",
    );
    let out = dir.path().join("out");
    let res = sclab(&["run", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(res.status.code(), Some(3));
    let record: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("error.json")).unwrap()).unwrap();
    assert_eq!(record["kind"], "runtime");
}

#[test]
fn bounds_subcommand_prints_csv() {
    let res = sclab(&["bounds", "--schedule", "balanced", "--i", "3"], None);
    assert!(res.status.success());
    let text = String::from_utf8(res.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "schedule,i,k,A_k,bound_term,total_bound");
    assert_eq!(lines.len(), 1 + 4);
    let a: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(3).unwrap().parse().unwrap()).collect();
    let want = [0.5, 1.0 / 3.0, 0.25, 1.0];
    assert!(a.iter().zip(want).all(|(x, y)| (x - y).abs() < 1e-12), "{a:?}");

    let res = sclab(&["bounds", "--schedule", "real_each_gen", "--i", "2", "--alpha", "1.5"], None);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn deterministic_across_processes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(sclab(&["run", "--config", &cfg, "--out", a.to_str().unwrap()], None).status.success());
    assert!(sclab(&["run", "--config", &cfg, "--out", b.to_str().unwrap()], None).status.success());
    assert_eq!(std::fs::read(a.join("results.csv")).unwrap(), std::fs::read(b.join("results.csv")).unwrap());
    // replay from the manifest into a third directory
    let c = dir.path().join("c");
    let manifest = a.join("manifest.toml");
    assert!(sclab(&["run", "--config", manifest.to_str().unwrap(), "--out", c.to_str().unwrap()], None).status.success());
    assert_eq!(std::fs::read(a.join("results.csv")).unwrap(), std::fs::read(c.join("results.csv")).unwrap());
}
