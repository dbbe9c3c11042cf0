mod common;

use common::Project;
use odre::analysis::VerdictClass;
use odre::campaign;
use odre::config::Level;
use odre::orchestrate::ProcessExecutor;

#[test]
fn corpus_reports_exactly_the_planted_victim() {
    let project = Project::new("corpus");
    let mut config = project.config(Level::Test, 31);
    config.rerun_count = 2;
    config.reorder_count = 3;
    config.jobs = 4;
    let outcome = campaign::run(&config, &ProcessExecutor).unwrap();
    assert!(!outcome.run.unreliable);

    let od: Vec<(String, String)> = outcome
        .verdicts
        .iter()
        .filter(|v| v.class == VerdictClass::OrderDependentCandidate)
        .map(|v| (v.identity.file.clone(), v.identity.full_name()))
        .collect();
    assert_eq!(
        od,
        [("src/c03_interleaved.test.js".to_string(), "counter > counter starts at zero".to_string())]
    );
    assert_eq!(outcome.summary.count(VerdictClass::NondeterministicFlaky), 0);
    assert_eq!(outcome.summary.count(VerdictClass::StableFail), 0);

    // Tests the model cannot name still show up, keyed by their reported titles.
    let names: Vec<String> = outcome.verdicts.iter().map(|v| v.identity.full_name()).collect();
    for observed in ["loop case beta", "add(2, 3) = 5", "offset 20 > adds the offset", "group computed > static inside dynamic describe"] {
        assert!(names.iter().any(|n| n == observed), "{observed} missing from {names:?}");
    }

    let md = std::fs::read_to_string(outcome.summary.markdown_path.as_ref().unwrap()).unwrap();
    assert!(md.contains("counter > counter starts at zero"));
    assert!(md.contains("--seed=31"));
    assert!(outcome.cleanup.removed.len() == outcome.artifacts.len());
    assert!(outcome.artifacts.iter().all(|a| !a.output_path.exists()));
}
