//! One detection campaign from discovery to report.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU32, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

use crate::analysis::{build_matrix, classify, emit_report, MatrixError, ReportContext, ReportSummary, Verdict, VerdictClass};
use crate::config::{check_environment, Config, EnvironmentError, EnvironmentReport, Level};
use crate::discovery::{list_test_files, DiscoveryError, TestFileInventory};
use crate::extract::{parse_file, TestSuiteModel};
use crate::orchestrate::{expected_identities, run_campaign, CampaignContext, CampaignRun, Executor, OrchestrationError};
use crate::permute::{build_plan, relative_id, PermutationPlan, PlanInput};
use crate::rewrite::{cleanup, rewrite, CleanupReport, ReorderedArtifact};

/// Default campaign root inside the project.
pub const STATE_DIR: &str = ".odre";

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error(transparent)]
    Environment(#[from] EnvironmentError),
    #[error("unsupported environment: {}", .0.join("; "))]
    Unsupported(Vec<String>),
    #[error("test discovery failed: {0}")]
    Discovery(#[from] DiscoveryError),
    #[error(transparent)]
    Orchestration(#[from] OrchestrationError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

impl CampaignError {
    pub fn exit_code(&self) -> i32 {
        2
    }
}

#[derive(Debug)]
pub struct CampaignOutcome {
    pub campaign_id: String,
    pub campaign_dir: PathBuf,
    pub environment: EnvironmentReport,
    pub inventory: TestFileInventory,
    pub plan: PermutationPlan,
    pub artifacts: Vec<ReorderedArtifact>,
    pub run: CampaignRun,
    pub cleanup: CleanupReport,
    pub verdicts: Vec<Verdict>,
    pub summary: ReportSummary,
}

impl CampaignOutcome {
    /// 1 when candidates were found and the config asks to fail on them.
    pub fn exit_code(&self, config: &Config) -> i32 {
        if config.fail_on_od && self.summary.count(VerdictClass::OrderDependentCandidate) > 0 {
            1
        } else {
            0
        }
    }

    pub fn verdict(&self, test_name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.identity.test_name == test_name)
    }
}

pub fn new_campaign_id() -> String {
    static COUNTER: AtomicU32 = AtomicU32::new(0);
    let millis = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    format!(
        "{millis}-{}-{}",
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    )
}

/// Parses every file, keeping the ones that parse.
fn parse_models(files: &[PathBuf]) -> Vec<TestSuiteModel> {
    files
        .iter()
        .filter_map(|f| match parse_file(f) {
            Ok(m) => {
                for w in &m.warnings {
                    log::warn!("{w}");
                }
                Some(m)
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", f.display());
                None
            }
        })
        .collect()
}

/// Writes one artifact per order set, dropping a unit's orders entirely
/// if any of its artifacts cannot be produced.
fn materialize(
    plan: &mut PermutationPlan,
    models: &[TestSuiteModel],
) -> Vec<ReorderedArtifact> {
    let mut artifacts = Vec::new();
    for unit in &mut plan.units {
        let Some(model) = models
            .iter()
            .find(|m| Some(&m.file_path) == unit.source_file.as_ref())
        else {
            continue;
        };
        let mut made = Vec::new();
        let mut failed = None;
        for set in &unit.order_sets {
            match rewrite(model, set, plan.level, plan.seed, &unit.unit_id) {
                Ok(a) => made.push(a),
                Err(e) => {
                    failed = Some(e);
                    break;
                }
            }
        }
        if let Some(e) = failed {
            log::warn!("{}: not reordered: {e}", unit.unit_id);
            plan.diagnostics.push(format!("{}: not reordered: {e}", unit.unit_id));
            cleanup(made.iter().map(|a| a.output_path.as_path()), false);
            unit.order_sets.clear();
        } else {
            artifacts.extend(made);
        }
    }
    artifacts
}

/// Runs a full campaign with `config`.
pub fn run(config: &Config, executor: &dyn Executor) -> Result<CampaignOutcome, CampaignError> {
    let environment = check_environment(config)?;
    for d in &environment.diagnostics {
        log::warn!("{d}");
    }
    if !environment.supported {
        return Err(CampaignError::Unsupported(environment.diagnostics.clone()));
    }
    if config.level == Level::Suite && config.sequencer.is_none() {
        return Err(OrchestrationError::NoSequencer.into());
    }

    let inventory = list_test_files(config)?;
    let campaign_id = new_campaign_id();
    let campaign_dir = config
        .output_dir
        .clone()
        .unwrap_or_else(|| config.project_path.join(STATE_DIR))
        .join(&campaign_id);
    log::info!("campaign {campaign_id}: {} test file(s)", inventory.files.len());

    let models = parse_models(&inventory.files);
    let mut plan = match config.level {
        Level::Suite => build_plan(PlanInput::Files(&inventory.files), config),
        _ => build_plan(PlanInput::Models(&models), config),
    };
    for d in &plan.diagnostics {
        log::info!("{d}");
    }
    let artifacts = match config.level {
        Level::Suite => Vec::new(),
        _ => materialize(&mut plan, &models),
    };

    let expected: BTreeMap<String, Vec<_>> = models
        .iter()
        .map(|m| {
            let rel = relative_id(&config.project_path, &m.file_path);
            let ids = expected_identities(m, &rel);
            (rel, ids)
        })
        .collect();
    let ctx = CampaignContext {
        campaign_id: campaign_id.clone(),
        campaign_dir: campaign_dir.clone(),
        expected,
        sources: models
            .iter()
            .map(|m| (relative_id(&config.project_path, &m.file_path), m.file_path.clone()))
            .collect(),
        suite_files: inventory.files.clone(),
        environment: Some(environment.clone()),
    };

    let run = run_campaign(&plan, &artifacts, &ctx, config, executor);
    let cleanup = cleanup(
        artifacts.iter().map(|a| a.output_path.as_path()),
        config.keep_artifacts,
    );
    let run = run?;

    let matrix = build_matrix(&run.records)?;
    let verdicts = classify(&matrix, config.inconclusive_threshold);
    let summary = emit_report(
        &verdicts,
        &plan,
        config,
        &ReportContext {
            campaign_id: &campaign_id,
            out_dir: &campaign_dir,
            environment: Some(&environment),
            artifacts: &artifacts,
            unreliable: run.unreliable,
        },
    );

    Ok(CampaignOutcome {
        campaign_id,
        campaign_dir,
        environment,
        inventory,
        plan,
        artifacts,
        run,
        cleanup,
        verdicts,
        summary,
    })
}
