mod common;

use std::fs;

use common::{code, demo, golden_run, run, stderr, stdout};

fn mock() -> String {
    demo().to_str().unwrap().to_string()
}

#[test]
fn generate_appends_forecasts_and_skips_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--mock", &mock(), "generate", "--topic", "automotive", "-n", "3", "--as-of", "2024-02-15"];
    let o = run(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).ends_with("3 generated\n"));
    let o = run(dir.path(), &args);
    assert!(stdout(&o).ends_with("0 generated\n"));
    assert_eq!(fs::read_to_string(dir.path().join("ledger.jsonl")).unwrap().lines().count(), 3);
}

#[test]
fn pending_estimates_on_an_empty_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["--mock", &mock(), "estimate", "--all-pending"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o), "0 estimated\n");
}

#[test]
fn estimate_is_guarded_and_traced() {
    let dir = tempfile::tempdir().unwrap();
    let m = mock();
    run(dir.path(), &["--mock", &m, "generate", "--topic", "energy", "-n", "1", "--as-of", "2024-02-15"]);
    let o = run(dir.path(), &["--mock", &m, "estimate", "--all-pending", "--trace"]);
    assert_eq!(stdout(&o).lines().last(), Some("1 estimated"));
    let traces: Vec<_> = fs::read_dir(dir.path().join("traces")).unwrap().collect();
    assert_eq!(traces.len(), 1);
    let trace = fs::read_to_string(traces[0].as_ref().unwrap().path()).unwrap();
    assert_eq!(trace.lines().count(), 6);

    let id = fs::read_to_string(dir.path().join("ledger.jsonl")).unwrap();
    let id = serde_json::from_str::<serde_json::Value>(id.lines().next().unwrap()).unwrap()["payload"]["id"]
        .as_str()
        .unwrap()
        .to_string();
    let o = run(dir.path(), &["--mock", &m, "estimate", "--id", &id]);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("--force"), "{}", stderr(&o));
    let lines = |d: &std::path::Path| fs::read_to_string(d.join("ledger.jsonl")).unwrap().lines().count();
    assert_eq!(lines(dir.path()), 2);
    let o = run(dir.path(), &["--mock", &m, "estimate", "--id", &id, "--force"]);
    assert_eq!(code(&o), 0);
    assert_eq!(lines(dir.path()), 3);
}

#[test]
fn calibrating_too_few_records_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let m = mock();
    run(dir.path(), &["--mock", &m, "generate", "--topic", "energy", "-n", "2", "--as-of", "2024-02-15"]);
    run(dir.path(), &["--mock", &m, "estimate", "--all-pending"]);
    run(dir.path(), &["--mock", &m, "factcheck", "--as-of", "2024-10-15"]);
    let o = run(dir.path(), &["calibrate", "--seed", "1"]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));
    assert!(stderr(&o).contains("at least 4"), "{}", stderr(&o));
}

#[test]
fn unwritable_ledger_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("blocker"), "not a directory").unwrap();
    let o = run(
        dir.path(),
        &["--mock", &mock(), "--ledger", "blocker/ledger.jsonl", "generate", "--topic", "energy", "-n", "1", "--as-of", "2024-02-15"],
    );
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn corrupt_ledger_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("ledger.jsonl"), "{\"position\":0}\n").unwrap();
    let o = run(dir.path(), &["status"]);
    assert_eq!(code(&o), 4);
    assert!(stderr(&o).contains("line 1"), "{}", stderr(&o));
}

fn fixture_dir(rules: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("llm")).unwrap();
    fs::write(dir.path().join("llm/rules.jsonl"), rules).unwrap();
    dir
}

#[test]
fn unanswered_prompt_exits_2() {
    let fixtures = fixture_dir("{\"match\": [\"nothing matches this\"], \"completion\": {\"text\": \"x\"}}\n");
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["--mock", fixtures.path().to_str().unwrap(), "generate", "--topic", "energy", "-n", "1", "--as-of", "2024-02-15"],
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("stage generate"), "{}", stderr(&o));
}

#[test]
fn unparseable_generation_exits_3() {
    let fixtures = fixture_dir("{\"match\": [\"TASK: GENERATE_FORECASTS\"], \"completion\": {\"text\": \"I cannot help with that.\"}}\n");
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["--mock", fixtures.path().to_str().unwrap(), "generate", "--topic", "energy", "-n", "1", "--as-of", "2024-02-15"],
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn unknown_topic_without_trends_still_generates() {
    let fixtures = fixture_dir(
        "{\"match\": [\"TOPIC: Deep Sea Mining\\n\"], \"completion\": {\"text\": \"FORECAST 1\\nTITLE: Seabed mining licence granted\\nDESCRIPTION: A regulator grants a commercial seabed mining licence.\\nSTART: 2024-03-01\\nEND: 2024-12-31\\n\"}}\n",
    );
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["--mock", fixtures.path().to_str().unwrap(), "generate", "--topic", "deep-sea-mining", "-n", "1", "--as-of", "2024-02-15"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("warning: no trends"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["estimate"])), 1);
    assert_eq!(code(&run(dir.path(), &["frobnicate"])), 1);
    // no --mock and no configured model
    let o = run(dir.path(), &["generate", "--topic", "energy", "-n", "1"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert_eq!(code(&run(dir.path(), &["--help"])), 0);
}

#[test]
fn config_file_supplies_paths() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("foresight.toml"),
        format!("ledger_path = \"data/l.jsonl\"\nmock_fixtures_dir = {:?}\n", mock()),
    )
    .unwrap();
    let o = run(
        dir.path(),
        &["--config", "foresight.toml", "generate", "--topic", "energy", "-n", "2", "--as-of", "2024-02-15"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("data/l.jsonl").exists());
    fs::write(dir.path().join("bad.toml"), "api_key = \"secret\"\n").unwrap();
    assert_eq!(code(&run(dir.path(), &["--config", "bad.toml", "status"])), 1);
}

#[test]
fn rerunning_completed_steps_adds_nothing() {
    let dir = tempfile::tempdir().unwrap();
    golden_run(dir.path());
    let ledger = dir.path().join("ledger.jsonl");
    let before = fs::read(&ledger).unwrap();
    let m = mock();
    for args in [
        vec!["--mock", &m, "estimate", "--all-pending"],
        vec!["--mock", &m, "reconcile"],
        vec!["--mock", &m, "factcheck", "--as-of", "2024-10-15", "--screen"],
        vec!["calibrate", "--seed", "7"],
    ] {
        let o = run(dir.path(), &args);
        assert_eq!(code(&o), 0, "{args:?}: {}", stderr(&o));
    }
    assert_eq!(fs::read(&ledger).unwrap(), before);
}

#[test]
fn status_lists_every_forecast() {
    let dir = tempfile::tempdir().unwrap();
    golden_run(dir.path());
    let o = run(dir.path(), &["status"]);
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines.len(), 16);
    assert!(lines.iter().any(|l| l.contains("\tscored\t")));
}

#[test]
fn pinned_clock_makes_the_whole_run_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    golden_run(a.path());
    golden_run(b.path());
    for f in ["ledger.jsonl", "svr_model.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    assert_eq!(common::dir_files(&a.path().join("traces")), common::dir_files(&b.path().join("traces")));
}
