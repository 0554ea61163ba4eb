use std::path::Path;
use std::process::{Command, Output};

fn distmatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_distmatch"))
        .args(args)
        .env("DISTMATCH_THREADS", "1")
        .output()
        .unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_dir(dir: &Path) -> Vec<(String, Vec<u8>)> {
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
fn help_and_version_exit_zero() {
    for flag in ["--help", "--version"] {
        let out = distmatch(&[flag]);
        assert_eq!(out.status.code(), Some(0), "{flag}");
    }
    assert_eq!(distmatch(&["sensitivity", "--help"]).status.code(), Some(0));
    assert_eq!(distmatch(&["no-such-command"]).status.code(), Some(1));
}

#[test]
fn missing_input_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.bin");
    let out = distmatch(&["distances", "--cohort", arg(&missing), "--J", "9", "--out", arg(&dir.path().join("d.csv"))]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("absent.bin"), "{stderr}");

    let cfg = dir.path().join("grid.cfg");
    std::fs::write(&cfg, "calipers = 50\nunknown_key = 3\n").unwrap();
    let sim = dir.path().join("sim.cfg");
    std::fs::write(&sim, "n_treated = 2\nn_control = 2\nseed = 1\n").unwrap();
    assert_eq!(distmatch(&["simulate", "--spec", arg(&sim), "--out", arg(&dir.path().join("data"))]).status.code(), Some(0));
    let cohort = dir.path().join("cohort.bin");
    assert!(distmatch(&["ingest", "--data", arg(&dir.path().join("data")), "--out", arg(&cohort)]).status.success());
    let out = distmatch(&["sensitivity", "--cohort", arg(&cohort), "--config", arg(&cfg), "--out", arg(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown_key"));
}

fn pipeline(root: &Path) -> Vec<(String, Vec<u8>)> {
    std::fs::create_dir_all(root).unwrap();
    let sim = root.join("sim.cfg");
    std::fs::write(&sim, "n_treated = 25\nn_control = 35\nseed = 11\n").unwrap();
    let cfg = root.join("grid.cfg");
    std::fs::write(&cfg, "calipers = 50, 400\njs = 9, 99\nreps = 3\nseed = 5\nbasis_k = 4\n").unwrap();
    let data = root.join("data");
    let cohort = root.join("cohort.bin");
    let results = root.join("results");
    let steps: [Vec<&str>; 3] = [
        vec!["simulate", "--spec", arg(&sim), "--out", arg(&data)],
        vec!["ingest", "--data", arg(&data), "--out", arg(&cohort)],
        vec!["sensitivity", "--cohort", arg(&cohort), "--config", arg(&cfg), "--out", arg(&results)],
    ];
    for step in &steps {
        let out = distmatch(step);
        assert!(out.status.success(), "{step:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let matched = root.join("matched");
    let out = distmatch(&[
        "match", "--cohort", arg(&cohort), "--J", "99", "--caliper", "400", "--reps", "2", "--seed", "3", "--out",
        arg(&matched),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cox = root.join("cox.json");
    let out = distmatch(&[
        "cox", "--cohort", arg(&cohort), "--pairs", arg(&matched.join("pairs.csv")), "--basis-k", "4", "--out",
        arg(&cox),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut files = read_dir(&results);
    files.extend(read_dir(&matched).into_iter().map(|(n, b)| (format!("matched/{n}"), b)));
    files.push(("cox.json".into(), std::fs::read(&cox).unwrap()));
    files
}

#[test]
fn end_to_end_runs_repeat_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let a = pipeline(&dir.path().join("a"));
    let b = pipeline(&dir.path().join("b"));
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    for expected in ["cells.csv", "table.txt", "reps.csv", "metadata.json", "matched/pairs.csv", "cox.json"] {
        assert!(names.contains(&expected), "{expected} missing from {names:?}");
    }
    let cells = String::from_utf8(a.iter().find(|(n, _)| n == "cells.csv").unwrap().1.clone()).unwrap();
    assert_eq!(cells.lines().next().unwrap(), "C,J,interval,mean_HR,mean_pairs,n_success");
    assert_eq!(cells.lines().count(), 1 + 2 * 2 * 3);
    for ((na, ba), (nb, bb)) in a.iter().zip(&b) {
        assert_eq!(na, nb);
        assert!(ba == bb, "{na} differs between runs");
    }
}
