use std::path::Path;
use std::process::{Command, Output};

fn sagald(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sagald"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(args: &[&str]) -> i32 {
    sagald(args).status.code().expect("exited normally")
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn missing_problem_is_usage_error() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(code(&["constants", "--out", out.path().to_str().unwrap()]), 2);
}

#[test]
fn bad_flag_is_usage_error() {
    assert_eq!(code(&["sample", "--no-such-flag"]), 2);
}

#[test]
fn step_above_cap_needs_flag() {
    let out = tempfile::tempdir().unwrap();
    let o = out.path().to_str().unwrap();
    assert_eq!(code(&["sample", "--problem", "lin-1d", "--eta", "0.05", "--out", o]), 3);
    let args = [
        "sample", "--problem", "lin-1d", "--eta", "0.05", "--unsafe-eta", "--steps", "20", "--reps", "100", "--out", o,
    ];
    assert_eq!(code(&args), 0);
}

#[test]
fn invalid_config_exits_4() {
    let out = tempfile::tempdir().unwrap();
    let o = out.path().to_str().unwrap();
    assert_eq!(code(&["constants", "--problem", "lin-1d", "--eps", "0.5", "--out", o]), 4);
    assert_eq!(code(&["constants", "--problem", "lin-1d", "--x0", "1,2", "--out", o]), 4);
}

#[test]
fn constants_output_carries_hash() {
    let out = tempfile::tempdir().unwrap();
    let run = sagald(&["constants", "--problem", "lin-1d", "--out", out.path().to_str().unwrap()]);
    assert!(run.status.success());
    let text = std::fs::read_to_string(out.path().join("constants.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(v["config_hash"].is_string());
    assert!((v["K"].as_f64().unwrap() - 29789.4).abs() < 0.1);
}

#[test]
fn problem_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    std::fs::write(&path, sagald::BuiltinProblem::Micro1d.problem().to_json().unwrap()).unwrap();
    let out = dir.path().join("out");
    let args = ["constants", "--problem", path.to_str().unwrap(), "--out", out.to_str().unwrap()];
    assert_eq!(code(&args), 0);
}

fn rerun_identical(base: &[&str]) {
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    for (dir, threads) in dirs.iter().zip(["1", "1", "8"]) {
        let mut args = base.to_vec();
        args.extend(["--threads", threads, "--out", dir.path().to_str().unwrap()]);
        let run = sagald(&args);
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    }
    let first = dir_bytes(dirs[0].path());
    assert!(!first.is_empty());
    assert_eq!(first, dir_bytes(dirs[1].path()));
    assert_eq!(first, dir_bytes(dirs[2].path()));
}

#[test]
fn sample_reruns_are_byte_identical() {
    rerun_identical(&["sample", "--problem", "well-2d", "--steps", "200", "--reps", "100", "--seed", "7"]);
}

#[test]
fn couple_reruns_are_byte_identical() {
    rerun_identical(&[
        "couple", "--problem", "micro-1d", "--eta", "0.5", "--unsafe-eta", "--k-override", "0.2", "--reps", "300",
    ]);
}

#[test]
fn lln_reruns_are_byte_identical() {
    rerun_identical(&["lln", "--problem", "lin-1d", "--steps", "5000", "--reps", "8", "--checkpoints", "1000,2000"]);
}
