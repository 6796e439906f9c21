use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use tempfile::TempDir;

fn racesim(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_racesim"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_json(path: PathBuf) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

/// Timing CSV of a few synthetic races.
fn timing(tmp: &TempDir) -> PathBuf {
    let out = tmp.path().join("gen");
    ok(&racesim(&["generate", "--races", "3", "--seed", "5", "--out", out.to_str().unwrap()], tmp.path()));
    out.join("timing.csv")
}

#[test]
fn fit_writes_every_section() {
    let tmp = TempDir::new().unwrap();
    let csv = timing(&tmp);
    let out = tmp.path().join("fit");
    ok(&racesim(
        &["fit", "--data", csv.to_str().unwrap(), "--class", "SP9", "--out", out.to_str().unwrap()],
        tmp.path(),
    ));
    let p = read_json(out.join("params.json"));
    for key in ["start", "traffic", "c60_probability", "c60_duration_laps", "overtake", "tire_log_coeff", "fuel_sensitivity"] {
        assert!(p.get(key).is_some(), "missing `{key}` in {p}");
    }
    assert_eq!(p["traffic"].as_array().unwrap().len(), 5);
    assert!(out.join("fit_report.txt").exists());
    assert!(out.join("manifest.json").exists());
}

#[test]
fn fit_missing_file_names_path() {
    let tmp = TempDir::new().unwrap();
    let out = racesim(&["fit", "--data", "no_such_timing.csv", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no_such_timing.csv"), "{}", stderr(&out));
}

#[test]
fn fit_without_start_rows_falls_back() {
    let tmp = TempDir::new().unwrap();
    let csv = timing(&tmp);
    let text = std::fs::read_to_string(&csv).unwrap();
    let kept: String = text
        .lines()
        .filter(|l| {
            let f: Vec<&str> = l.split(',').collect();
            !(f[4] == "1" && f[5] == "1")
        })
        .map(|l| format!("{l}\n"))
        .collect();
    let trimmed = tmp.path().join("nostart.csv");
    std::fs::write(&trimmed, kept).unwrap();
    let out = racesim(&["fit", "--data", trimmed.to_str().unwrap(), "--out", "fit"], tmp.path());
    ok(&out);
    let report = std::fs::read_to_string(tmp.path().join("fit/fit_report.txt")).unwrap();
    let start = report.lines().find(|l| l.starts_with("start")).unwrap();
    assert!(start.contains("FALLBACK"), "{report}");
}

#[test]
fn race_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    for dir in ["a", "b"] {
        ok(&racesim(&["race", "--seed", "7", "--out", dir], tmp.path()));
    }
    for file in ["standings.json", "events.csv", "lap_chart.csv", "agent.json"] {
        let a = std::fs::read(tmp.path().join("a").join(file)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
}

#[test]
fn oracle_wins_deterministic_race() {
    let tmp = TempDir::new().unwrap();
    ok(&racesim(&["race", "--deterministic", "--strategy", "oracle", "--out", "r"], tmp.path()));
    let standings = read_json(tmp.path().join("r/standings.json"));
    assert_eq!(standings[0]["car_id"], 0, "{standings}");
    assert_eq!(standings[0]["retired"], false);
}

#[test]
fn stopping_every_lap_loses() {
    let tmp = TempDir::new().unwrap();
    let plan: String = (1..=25).map(|lap| format!("{lap} 4\n")).collect();
    std::fs::write(tmp.path().join("every_lap.txt"), plan).unwrap();
    ok(&racesim(&["race", "--strategy", "every_lap.txt", "--out", "r"], tmp.path()));
    let standings = read_json(tmp.path().join("r/standings.json"));
    let rows = standings.as_array().unwrap();
    let agent = rows.iter().find(|r| r["car_id"] == 0).unwrap();
    assert!(agent["retired"] == true || agent["position"] == rows.len(), "{agent}");
}

#[test]
fn bad_strategy_file_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    std::fs::write(tmp.path().join("plan.txt"), "8 8\n16 7\n").unwrap();
    let out = racesim(&["race", "--strategy", "plan.txt", "--out", "r"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("plan.txt:2:"), "{}", stderr(&out));
    assert!(!tmp.path().join("r").exists());
}

#[test]
fn usage_errors_exit_one() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(racesim(&["launch"], tmp.path()).status.code(), Some(1));
    assert_eq!(racesim(&["train", "--agent", "ppo", "--out", "x"], tmp.path()).status.code(), Some(1));
    assert_eq!(racesim(&["train", "--agent", "q", "--preset", "huge", "--out", "x"], tmp.path()).status.code(), Some(1));
    ok(&racesim(&["--help"], tmp.path()));
}

#[test]
fn smoke_training_writes_artifacts_and_evaluates() {
    let tmp = TempDir::new().unwrap();
    let start = Instant::now();
    ok(&racesim(&["train", "--agent", "dqn", "--preset", "smoke", "--out", "t"], tmp.path()));
    assert!(start.elapsed() < Duration::from_secs(60), "took {:?}", start.elapsed());
    let t = tmp.path().join("t");
    for file in ["checkpoint.json", "metrics.csv", "summary.json", "train_config.json", "manifest.json"] {
        assert!(t.join(file).exists(), "{file} missing");
    }
    let metrics = std::fs::read_to_string(t.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 501);
    assert!(metrics.starts_with("episode,total_reward,final_position,mean_loss,epsilon"));

    // thread count does not change the result
    let one = racesim(&["eval", "--ckpt", "t/checkpoint.json", "--races", "6", "--jobs", "1"], tmp.path());
    let three = racesim(&["eval", "--ckpt", "t/checkpoint.json", "--races", "6", "--jobs", "3"], tmp.path());
    ok(&one);
    assert_eq!(one.stdout, three.stdout);

    // the default config observes the DQN variant
    std::fs::write(tmp.path().join("base.cfg"), "env.observation = \"baseline\"\n").unwrap();
    let bad = racesim(&["eval", "--ckpt", "t/checkpoint.json", "--config", "base.cfg", "--races", "2"], tmp.path());
    assert_eq!(bad.status.code(), Some(2));
    assert!(stderr(&bad).contains("observation"), "{}", stderr(&bad));
}

#[test]
fn q_training_and_paper_preset() {
    let tmp = TempDir::new().unwrap();
    ok(&racesim(
        &["train", "--agent", "q", "--preset", "paper-v1", "--episodes", "20", "--eval-races", "2", "--out", "q"],
        tmp.path(),
    ));
    let tc = read_json(tmp.path().join("q/train_config.json"));
    assert_eq!(tc["learning_rate"], 0.001);
    assert_eq!(tc["episodes"], 20);
    let ckpt = read_json(tmp.path().join("q/checkpoint.json"));
    assert_eq!(ckpt["agent"], "q");
    ok(&racesim(&["race", "--strategy", "q/checkpoint.json", "--out", "r"], tmp.path()));
}

#[test]
fn outputs_stay_inside_out_dir() {
    let tmp = TempDir::new().unwrap();
    ok(&racesim(&["oracle", "--out", "o"], tmp.path()));
    ok(&racesim(&["race", "--out", "r"], tmp.path()));
    let mut entries: Vec<String> = std::fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    entries.sort();
    assert_eq!(entries, ["o", "r"]);
    let plan = std::fs::read_to_string(tmp.path().join("o/plan.txt")).unwrap();
    // the oracle's plan is itself a valid strategy file
    std::fs::copy(tmp.path().join("o/plan.txt"), tmp.path().join("o/plan_copy.txt")).unwrap();
    ok(&racesim(&["race", "--deterministic", "--strategy", "o/plan_copy.txt", "--out", "r2"], tmp.path()));
    assert!(plan.lines().filter(|l| !l.starts_with('#')).count() >= 3, "{plan}");
}
