use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn narrarl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_narrarl"))
        .args(args)
        .current_dir(dir)
        .env_remove("NARRARL_API_KEY")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

const SMOKE_CONFIG: &str = r#"{
  "grid": {"path": "g.json"},
  "rl": {"episodes": 10},
  "arbiter": {"kind": "scripted"},
  "run_seed": 7,
  "log_path": "logs/run.jsonl",
  "initial_qtable": "q.json"
}"#;

#[test]
fn offline_pipeline_matches_golden_render() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gen = narrarl(d, &["gen", "--size", "7", "--density", "0.3", "--seed", "42", "--out", "g.json"]);
    assert_eq!(gen.status.code(), Some(0), "{}", stderr(&gen));
    let train = narrarl(d, &["train", "--grid", "g.json", "--episodes", "100", "--seed", "7", "--out", "q.json"]);
    assert_eq!(train.status.code(), Some(0), "{}", stderr(&train));
    fs::write(d.join("cfg.json"), SMOKE_CONFIG).unwrap();
    let run = narrarl(d, &["run", "--config", "cfg.json"]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));
    assert!(d.join("logs/run.report.json").exists());

    let report = narrarl(d, &["report", "--log", "logs/run.jsonl"]);
    assert_eq!(report.status.code(), Some(0));
    let from_log: serde_json::Value = serde_json::from_str(&stdout(&report)).unwrap();
    let live: serde_json::Value = serde_json::from_str(&stdout(&run)).unwrap();
    for key in ["success_rate", "avg_steps_successful", "adherence_rate", "fallback_rate", "per_episode"] {
        assert_eq!(from_log[key], live[key], "{key}");
    }

    let render = narrarl(d, &["render", "--grid", "g.json", "--log", "logs/run.jsonl", "--episode", "9"]);
    assert_eq!(render.status.code(), Some(0));
    assert_eq!(stdout(&render), fs::read_to_string(fixtures().join("smoke_ep9.golden.txt")).unwrap());
    assert!(stderr(&render).is_empty());
}

#[test]
fn fixture_episode_renders_to_golden() {
    let f = fixtures();
    let out = narrarl(&f, &["render", "--grid", "empty3.grid.json", "--log", "trace_fixture.jsonl", "--episode", "0"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(stdout(&out), fs::read_to_string(f.join("trace_fixture_ep0.golden.txt")).unwrap());
}

#[test]
fn report_prints_fixture_metrics() {
    let out = narrarl(&fixtures(), &["report", "--log", "trace_fixture.jsonl"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["success_rate"].as_f64(), Some(2.0 / 3.0));
    assert_eq!(v["avg_steps_successful"].as_f64(), Some(5.0));
    assert_eq!(v["adherence_rate"].as_f64(), Some(17.0 / 19.0));
}

#[test]
fn missing_config_exits_one_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = narrarl(dir.path(), &["run", "--config", "missing.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("missing.json"));
    assert!(stdout(&out).is_empty());
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["frobnicate"][..], &["gen", "--size", "7"], &["gen", "--bogus"], &[]] {
        let out = narrarl(dir.path(), args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(stderr(&out).contains("Usage"), "{args:?}");
    }
    assert_eq!(narrarl(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn validation_and_runtime_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let full = narrarl(d, &["gen", "--size", "5", "--density", "1.0", "--seed", "1", "--out", "g.json"]);
    assert_eq!(full.status.code(), Some(1));
    assert!(!d.join("g.json").exists());

    fs::write(
        d.join("bad.json"),
        r#"{"grid":{"n":5,"density":0.3,"seed":1},"arbiter":{"kind":"llm"},"run_seed":1,"log_path":"x.jsonl"}"#,
    )
    .unwrap();
    let out = narrarl(d, &["run", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("arbiter.narrative"));

    // Missing API key for an llm arbiter is a validation problem.
    fs::write(
        d.join("llm.json"),
        r#"{"grid":{"n":5,"density":0.3,"seed":1},"arbiter":{"kind":"llm","narrative":"sherlock",
            "chat":{"endpoint":"http://127.0.0.1:9","model":"m"}},"run_seed":1,"log_path":"x.jsonl"}"#,
    )
    .unwrap();
    let out = narrarl(d, &["run", "--config", "llm.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("NARRARL_API_KEY"));

    // The log directory cannot be created because a file is in the way.
    fs::write(d.join("blocker"), "").unwrap();
    fs::write(
        d.join("io.json"),
        r#"{"grid":{"n":5,"density":0.3,"seed":1},"arbiter":{"kind":"scripted"},"run_seed":1,"log_path":"blocker/run.jsonl"}"#,
    )
    .unwrap();
    assert_eq!(narrarl(d, &["run", "--config", "io.json"]).status.code(), Some(2));
}

#[test]
fn sweep_runs_all_configs_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut paths = Vec::new();
    for i in 0..4 {
        let name = format!("c{i}.json");
        fs::write(
            d.join(&name),
            format!(
                r#"{{"grid":{{"n":5,"density":0.3,"seed":{i}}},"rl":{{"episodes":3}},"arbiter":{{"kind":"scripted"}},"run_seed":{i},"log_path":"out/{i}.jsonl"}}"#
            ),
        )
        .unwrap();
        paths.push(name);
    }
    let mut args = vec!["sweep", "--parallel", "3", "--configs"];
    args.extend(paths.iter().map(String::as_str));
    let out = narrarl(d, &args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let configs: Vec<_> = v.as_array().unwrap().iter().map(|r| r["config"].as_str().unwrap().to_owned()).collect();
    assert_eq!(configs, paths);
    for i in 0..4 {
        assert!(d.join(format!("out/{i}.jsonl")).exists());
    }

    // Same log path twice is rejected up front.
    let out = narrarl(d, &["sweep", "--configs", "c0.json", "c0.json"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn render_rejects_unknown_episode() {
    let out = narrarl(
        &fixtures(),
        &["render", "--grid", "empty3.grid.json", "--log", "trace_fixture.jsonl", "--episode", "7"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("episode 7"));
}

#[test]
fn train_rejects_bad_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    narrarl(d, &["gen", "--size", "5", "--density", "0.2", "--seed", "3", "--out", "g.json"]);
    let out = narrarl(
        d,
        &["train", "--grid", "g.json", "--episodes", "5", "--seed", "1", "--out", "q.json", "--alpha", "1.5"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--alpha"));
    let out = narrarl(d, &["train", "--grid", "nope.json", "--episodes", "5", "--seed", "1", "--out", "q.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("nope.json"));
}
