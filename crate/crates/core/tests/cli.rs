use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn mfs(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfs"))
        .args(args)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .env_remove("MFS_SEED")
        .output()
        .unwrap()
}

fn run(sub: &str, config: &str, out: &Path) -> Output {
    let path = configs().join(config);
    mfs(&[sub, "--config", path.to_str().unwrap()], out)
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn sweep_bundled_config_writes_fifteen_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("sweep", "sweep.json", dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let body = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let lines: Vec<&str> = body.lines().collect();
    assert!(lines[0].starts_with("# config_hash="));
    assert!(lines[0].ends_with(" seed=2024"));
    assert_eq!(lines[1], "n,case,p_e,ci_low,ci_high,trials,seed");
    assert_eq!(lines.len(), 2 + 15);
    assert!(lines[2..].iter().all(|l| l.split(',').count() == 7 && l.ends_with(",10000,2024")));
}

#[test]
fn missing_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = mfs(&["sweep", "--config", "/definitely/not/here.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not/here.json"));
}

#[test]
fn malformed_config_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    fs::write(&config, "{\n  \"n_sensors\": 10,\n  \"osnr_db\": ,\n}\n").unwrap();
    let out = mfs(&["fuse", "--config", config.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn invalid_scenario_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.json");
    fs::write(&config, r#"{"n_sensors": 3, "n_faulty": 5, "osnr_db": 2.0, "trials": 1, "seed": 1}"#).unwrap();
    let out = mfs(&["fuse", "--config", config.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unwritable_output_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = run("mvl", "mvl_constant.json", &blocker.join("sub"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn mvl_constant_function_has_no_testable_fault() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("mvl", "mvl_constant.json", dir.path());
    assert_eq!(out.status.code(), Some(0));
    let body = fs::read_to_string(dir.path().join("mvl_report.csv")).unwrap();
    let rows: Vec<&str> = body.lines().skip(2).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.ends_with(",false")));
}

#[test]
fn reruns_are_byte_identical() {
    for (sub, config) in [
        ("trace", "trace.json"),
        ("capture", "capture.json"),
        ("mvl", "mvl_min.json"),
        ("fuse", "fuse.json"),
    ] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        assert_eq!(run(sub, config, a.path()).status.code(), Some(0), "{sub}");
        assert_eq!(run(sub, config, b.path()).status.code(), Some(0), "{sub}");
        let fa = read_dir_sorted(a.path());
        assert!(!fa.is_empty());
        assert_eq!(fa, read_dir_sorted(b.path()), "{sub}");
        for (name, body) in &fa {
            assert!(body.starts_with(b"# config_hash="), "{sub} {name}");
        }
    }
}

#[test]
fn capture_writes_three_trace_files_and_report() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run("capture", "capture.json", dir.path()).status.code(), Some(0));
    for name in ["sensor_1.csv", "sensor_2.csv", "captured.csv"] {
        let body = fs::read_to_string(dir.path().join(name)).unwrap();
        assert_eq!(body.lines().nth(1), Some("time,sensor_id,value"), "{name}");
    }
    let report = fs::read_to_string(dir.path().join("capture_report.csv")).unwrap();
    assert_eq!(report.lines().nth(1), Some("slot,budget,arrivals,captured,belief_top_state"));
    assert!(report.lines().last().unwrap().contains("ratio="));
}

#[test]
fn fuse_report_schema() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run("fuse", "fuse.json", dir.path()).status.code(), Some(0));
    let body = fs::read_to_string(dir.path().join("fuse_report.csv")).unwrap();
    let lines: Vec<&str> = body.lines().collect();
    assert_eq!(lines[1], "epoch,true_hyp,fused,errors_so_far,flagged_sensors");
    assert_eq!(lines.len(), 2 + 40);
}

#[test]
fn seed_flag_and_env_override_document_seed() {
    let config = configs().join("trace.json");
    let config = config.to_str().unwrap();
    let a = tempfile::tempdir().unwrap();
    assert_eq!(mfs(&["trace", "--config", config, "--seed", "99"], a.path()).status.code(), Some(0));
    let b = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_mfs"))
        .args(["trace", "--config", config, "--quiet", "--out"])
        .arg(b.path())
        .env("MFS_SEED", "99")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let fa = read_dir_sorted(a.path());
    assert_eq!(fa, read_dir_sorted(b.path()));
    assert!(String::from_utf8_lossy(&fa[0].1).lines().next().unwrap().ends_with(" seed=99"));
}
