use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn czk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_czk"))
        .args(args)
        .env_remove("CZK_SEED")
        .output()
        .unwrap()
}

fn lines(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

#[test]
fn params_prints_exact_values() {
    let out = czk(&["params", "--k", "8", "--cap", "1000"]);
    assert!(out.status.success());
    let r = &lines(&out)[0];
    assert_eq!(r["beta"], 5);
    assert_eq!(r["c"], "1/61776");
    assert_eq!(r["f"][1], "32");
}

#[test]
fn usage_errors_exit_with_two() {
    for args in [
        vec!["params", "--k", "8"],
        vec!["params", "--k", "8", "--cap", "lots"],
        vec!["lemmas", "--simulator", "oracle"],
        vec!["estimate", "--event", "maybe", "--trials", "40"],
        vec!["lemmas", "--graph-size", "2"],
        vec!["frobnicate"],
        vec!["lemmas", "--format", "xml"],
    ] {
        let out = czk(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "k = three\n").unwrap();
    assert_eq!(czk(&["params", "--config", cfg.to_str().unwrap(), "--cap", "3"]).status.code(), Some(2));
}

#[test]
fn lemma_reports_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for path in [&a, &b] {
        let out = czk(&["lemmas", "--trials", "1000", "--seed", "42", "--out", path.to_str().unwrap()]);
        // the default concentration parameters miss their target, so exit 1
        assert_eq!(out.status.code(), Some(1));
        assert!(String::from_utf8_lossy(&out.stderr).contains("tape concentration"));
    }
    let (x, y) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(x, y);
    let summary: Value = serde_json::from_str(String::from_utf8_lossy(&x).lines().next().unwrap()).unwrap();
    assert_eq!(summary["trials"], 1000);
    assert_eq!(summary["structure_violations"], 0);
    assert_eq!(String::from_utf8_lossy(&x).lines().count(), 1001);
}

#[test]
fn lemmas_exit_zero_when_every_check_holds() {
    let out = czk(&["lemmas", "--trials", "50", "--seed", "3", "--rho", "1", "--conc-m", "100", "--conc-k", "4"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn halted_trees_report_a_reproducing_pair() {
    let out = czk(&["lemmas", "--trials", "200", "--seed", "1", "--cap", "10", "--rho", "1", "--conc-m", "10", "--conc-k", "2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("reproduce with seed 1, trial"));
    let ok = czk(&[
        "lemmas", "--trials", "200", "--seed", "1", "--cap", "10", "--rho", "1", "--conc-m", "10", "--conc-k", "2",
        "--bad-rule", "activated",
    ]);
    assert_eq!(ok.status.code(), Some(0));
}

#[test]
fn seed_comes_from_the_environment_and_config_file() {
    let run = |env: Option<&str>, args: &[&str]| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_czk"));
        cmd.env_remove("CZK_SEED")
            .args(["lemmas", "--trials", "20", "--rho", "1", "--conc-m", "10", "--conc-k", "2"])
            .args(args);
        if let Some(s) = env {
            cmd.env("CZK_SEED", s);
        }
        cmd.output().unwrap().stdout
    };
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "seed = 5\ncap = 400\n").unwrap();
    let via_env = run(Some("5"), &["--cap", "400"]);
    let via_flag = run(None, &["--seed", "5", "--cap", "400"]);
    let via_file = run(None, &["--config", cfg.to_str().unwrap()]);
    assert_eq!(via_env, via_flag);
    assert_eq!(via_env, via_file);
    assert_ne!(via_env, run(Some("6"), &["--cap", "400"]));
}

#[test]
fn attack_on_non_isomorphic_graphs_mostly_says_not_in_l() {
    let out = czk(&["attack", "--graph-size", "6", "--iso", "false", "--repeats", "40", "--seed", "2", "--simulator", "witness"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let records = lines(&out);
    let summary = records.last().unwrap();
    assert_eq!(summary["repeats"], 40);
    assert!(summary["not_in_l"].as_u64().unwrap() >= 20, "{summary}");
}

#[test]
fn blowup_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("blowup.csv");
    let out = czk(&["blowup", "--k-max", "3", "--m", "1", "--trials", "50", "--seed", "1", "--format", "csv", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(path).unwrap();
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    let header = rows.headers().unwrap().clone();
    assert!(header.iter().any(|h| h == "mean_steps"));
    assert_eq!(rows.records().count(), 3);
}

#[test]
fn served_verifier_talks_to_the_attacker() {
    let dir = tempfile::tempdir().unwrap();
    let sock = dir.path().join("v.sock");
    let server = Command::new(env!("CARGO_BIN_EXE_czk"))
        .args(["serve", "--listen", sock.to_str().unwrap(), "--sessions", "2", "--seed", "4", "--simulator", "witness"])
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    for _ in 0..100 {
        if sock.exists() {
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(20));
    }
    let out = czk(&["attack", "--connect", sock.to_str().unwrap(), "--repeats", "2", "--seed", "4", "--simulator", "witness"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(lines(&out).last().unwrap()["in_l"], 2);
    let served = server.wait_with_output().unwrap();
    assert!(served.status.success());
    assert_eq!(String::from_utf8_lossy(&served.stdout).matches("\"verdict\":true").count(), 2);
}

#[test]
fn fixtures_verify_names_a_corrupted_fixture() {
    let out = czk(&["fixtures", "verify", "--dir", corpus().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let dir = tempfile::tempdir().unwrap();
    for entry in std::fs::read_dir(corpus()).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), dir.path().join(entry.file_name())).unwrap();
    }
    std::fs::write(dir.path().join("blowup-m1.out"), "tampered\n").unwrap();
    let out = czk(&["fixtures", "verify", "--dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fixture `blowup-m1` failed"));
}
