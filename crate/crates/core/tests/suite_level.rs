mod common;

use std::process::Command;

use common::Project;
use odre::analysis::VerdictClass;
use odre::campaign;
use odre::config::Level;
use odre::orchestrate::{ProcessExecutor, ORDER_FILE_ENV};

fn jest_with_order(project: &Project, order_file: Option<&std::path::Path>) -> (bool, serde_json::Value, String) {
    let out = project.path("report.json");
    let mut cmd = Command::new(project.path("node_modules/.bin/jest"));
    cmd.arg("--json")
        .arg(format!("--outputFile={}", out.display()))
        .arg("--runInBand")
        .arg("--testSequencer=./order-sequencer.js")
        .current_dir(&project.root)
        .env("CI", "true")
        .env_remove(ORDER_FILE_ENV);
    if let Some(f) = order_file {
        cmd.env(ORDER_FILE_ENV, f);
    }
    let output = cmd.output().unwrap();
    let report = std::fs::read_to_string(&out)
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok())
        .unwrap_or(serde_json::Value::Null);
    (
        output.status.success(),
        report,
        String::from_utf8_lossy(&output.stderr).into_owned(),
    )
}

#[test]
fn manifest_order_is_honored_then_the_rest() {
    let project = Project::new("suite-order");
    let manifest = project.path("order.json");
    std::fs::write(
        &manifest,
        serde_json::json!({
            "campaign_id": "manual",
            "ordered_paths": [project.path("b_reader.test.js"), project.path("a_writer.test.js")],
        })
        .to_string(),
    )
    .unwrap();
    let (_, report, stderr) = jest_with_order(&project, Some(&manifest));
    let mut files: Vec<(u64, String)> = report["testResults"]
        .as_array()
        .unwrap_or_else(|| panic!("no report: {stderr}"))
        .iter()
        .map(|r| {
            let name = r["name"].as_str().unwrap();
            (
                r["startTime"].as_u64().unwrap(),
                name.rsplit('/').next().unwrap().to_string(),
            )
        })
        .collect();
    files.sort_by_key(|(t, _)| *t);
    let order: Vec<&str> = files.iter().map(|(_, n)| n.as_str()).collect();
    assert_eq!(order, ["b_reader.test.js", "a_writer.test.js", "c_bystander.test.js"]);
}

#[test]
fn missing_order_file_fails_the_run() {
    let project = Project::new("suite-order");
    let (ok, _, stderr) = jest_with_order(&project, None);
    assert!(!ok);
    assert!(stderr.contains("ODRE_ORDER_FILE is not set"), "{stderr}");
}

#[test]
fn suite_level_campaign_detects_cross_file_pollution() {
    let project = Project::new("suite-order");
    let mut config = project.config(Level::Suite, 11);
    config.rerun_count = 3;
    config.jobs = 4;
    config.sequencer = Some(project.path("order-sequencer.js"));
    let outcome = campaign::run(&config, &ProcessExecutor).unwrap();

    // 3! = 6 orders plus the original, three reruns each.
    assert_eq!(outcome.run.records.len(), 21);
    assert!(outcome.run.records.iter().all(|r| r.valid));
    let od: Vec<_> = outcome
        .verdicts
        .iter()
        .filter(|v| v.class == VerdictClass::OrderDependentCandidate)
        .map(|v| v.identity.full_name())
        .collect();
    assert_eq!(od, ["sees no shared state file"]);
    let results = project.path("_extracted results test files_");
    for k in 0..7 {
        for r in 1..=3 {
            assert!(results.join(format!("testOutput{k}{r}")).is_file());
        }
    }
}

#[test]
fn suite_level_requires_a_sequencer() {
    let project = Project::new("suite-order");
    let mut config = project.config(Level::Suite, 1);
    config.sequencer = None;
    let err = campaign::run(&config, &ProcessExecutor).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("--sequencer"));
}
