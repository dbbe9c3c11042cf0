//! Running Jest once per (order, rerun) and recording what happened.
//!
//! Result files land in the project under the level's directory
//! (`_extracted results_`, `_extracted results describes_`,
//! `_extracted results test files_`) with names starting `testOutput`.
//! TEST and DESCRIBE runs are named after the targeted suite and the rerun
//! count (`testOutputFoo1`, `testOutputFoo23`); SUITE runs after the reorder
//! number and rerun count (`testOutput23`). Every result is also copied to an
//! unambiguous name under the campaign directory.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Config, EnvironmentReport, Level};
use crate::extract::{Modifier, NodeKind, TestName, TestSuiteModel};
use crate::permute::{PermutationPlan, PROJECT_CONTAINER};
use crate::rewrite::{suite_name, ReorderedArtifact};

pub const TEST_RESULTS_DIR: &str = "_extracted results_";
pub const DESCRIBE_RESULTS_DIR: &str = "_extracted results describes_";
pub const SUITE_RESULTS_DIR: &str = "_extracted results test files_";
pub const RESULT_PREFIX: &str = "testOutput";
pub const ORDER_FILE_ENV: &str = "ODRE_ORDER_FILE";
pub const MANIFEST_FILE: &str = "campaign-manifest.json";

/// Share of invalid runs above which a campaign is unreliable.
const UNRELIABLE_FRACTION: f64 = 0.5;

pub fn results_dir(level: Level) -> &'static str {
    match level {
        Level::Test => TEST_RESULTS_DIR,
        Level::Describe => DESCRIBE_RESULTS_DIR,
        Level::Suite => SUITE_RESULTS_DIR,
    }
}

/// In-project result name: `testOutput<suite><rerun>` for TEST/DESCRIBE,
/// `testOutput<reorder><rerun>` for SUITE.
pub fn result_file_name(level: Level, suite: &str, reorder_index: u32, rerun_index: u32) -> String {
    match level {
        Level::Suite => format!("{RESULT_PREFIX}{reorder_index}{rerun_index}"),
        _ => format!("{RESULT_PREFIX}{suite}{rerun_index}"),
    }
}

/// Unambiguous name used in the campaign mirror.
pub fn mirror_file_name(level: Level, unit_id: &str, reorder_index: u32, rerun_index: u32) -> String {
    match level {
        Level::Suite => format!("{RESULT_PREFIX}{reorder_index}_{rerun_index}.json"),
        _ => format!(
            "{RESULT_PREFIX}{}_{reorder_index}_{rerun_index}.json",
            unit_id.replace('/', "__")
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Pass,
    Fail,
    Skip,
    Todo,
    Timeout,
    Missing,
}

impl Outcome {
    pub fn from_jest_status(status: &str) -> Self {
        match status {
            "passed" | "focused" => Outcome::Pass,
            "pending" | "skipped" | "disabled" => Outcome::Skip,
            "todo" => Outcome::Todo,
            _ => Outcome::Fail,
        }
    }

    /// FAIL, TIMEOUT and MISSING all count as failing.
    pub fn is_fail_like(self) -> bool {
        matches!(self, Outcome::Fail | Outcome::Timeout | Outcome::Missing)
    }
}

/// A logical test, stable across every artifact and order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TestIdentity {
    /// Original source file, relative to the project.
    pub file: String,
    pub describe_path: Vec<String>,
    pub test_name: String,
    pub modifier: Modifier,
    /// Index among same-named siblings, for duplicate titles.
    pub occurrence: u32,
}

impl TestIdentity {
    pub fn full_name(&self) -> String {
        let mut parts = self.describe_path.clone();
        parts.push(self.test_name.clone());
        parts.join(" > ")
    }

    fn key(&self) -> (&str, &[String], &str, u32) {
        (&self.file, &self.describe_path, &self.test_name, self.occurrence)
    }
}

/// Tests of `model` whose reported titles are known statically: literal
/// names under literal, non-`.each` describes, excluding `.each` tests.
pub fn expected_identities(model: &TestSuiteModel, file_rel: &str) -> Vec<TestIdentity> {
    let mut seen: HashMap<(Vec<String>, String), u32> = HashMap::new();
    let mut out = Vec::new();
    let mut each_describes: Vec<Vec<TestName>> = Vec::new();
    for node in model.nodes() {
        if node.kind == NodeKind::Describe {
            if node.modifier == Modifier::Each {
                let mut p = node.container_path.clone();
                p.push(node.name.clone());
                each_describes.push(p);
            }
            continue;
        }
        if node.modifier == Modifier::Each
            || each_describes
                .iter()
                .any(|p| node.container_path.starts_with(p))
        {
            continue;
        }
        let Some(name) = node.name.literal() else {
            continue;
        };
        let Some(path) = node
            .container_path
            .iter()
            .map(|n| n.literal().map(str::to_owned))
            .collect::<Option<Vec<_>>>()
        else {
            continue;
        };
        let counter = seen.entry((path.clone(), name.to_owned())).or_insert(0);
        out.push(TestIdentity {
            file: file_rel.to_owned(),
            describe_path: path,
            test_name: name.to_owned(),
            modifier: node.modifier,
            occurrence: *counter,
        });
        *counter += 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunTarget {
    /// A single test file, run by path.
    File { path: PathBuf },
    /// SUITE level: a file-order manifest handed to the sequencer.
    Manifest { path: PathBuf, ordered_paths: Vec<PathBuf> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSpec {
    pub level: Level,
    pub unit_id: String,
    /// 0 is the original order.
    pub reorder_index: u32,
    pub rerun_index: u32,
    pub target: RunTarget,
    /// Result file inside the project.
    pub output_path: PathBuf,
    /// Copy under the campaign directory.
    pub mirror_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub identity: TestIdentity,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_spec: RunSpec,
    pub exit_status: Option<i32>,
    pub wall_time_ms: u64,
    pub timed_out: bool,
    /// False when Jest produced no readable JSON even after a retry.
    pub valid: bool,
    pub attempts: u32,
    pub outcomes: Vec<TestOutcome>,
    pub raw_json_path: Option<PathBuf>,
}

impl RunRecord {
    pub fn outcome_of(&self, id: &TestIdentity) -> Option<Outcome> {
        self.outcomes
            .iter()
            .find(|o| &o.identity == id)
            .map(|o| o.outcome)
    }
}

/// One process launch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecRequest {
    pub argv: Vec<String>,
    pub cwd: PathBuf,
    pub env: Vec<(String, String)>,
    pub timeout: Duration,
}

#[derive(Debug, Clone, Default)]
pub struct ExecOutcome {
    pub exit_code: Option<i32>,
    pub timed_out: bool,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    pub wall_time: Duration,
}

/// Launches processes; swapped out in tests.
pub trait Executor: Sync {
    fn execute(&self, request: &ExecRequest) -> std::io::Result<ExecOutcome>;
}

/// Runs real subprocesses, killing them at the timeout.
#[derive(Debug, Default, Clone, Copy)]
pub struct ProcessExecutor;

impl Executor for ProcessExecutor {
    fn execute(&self, request: &ExecRequest) -> std::io::Result<ExecOutcome> {
        let (program, args) = request
            .argv
            .split_first()
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty argv"))?;
        let start = Instant::now();
        let mut child = Command::new(program)
            .args(args)
            .current_dir(&request.cwd)
            .envs(request.env.iter().map(|(k, v)| (k, v)))
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()?;
        let drain = |mut r: Box<dyn Read + Send>| {
            std::thread::spawn(move || {
                let mut buf = Vec::new();
                let _ = r.read_to_end(&mut buf);
                buf
            })
        };
        let out = drain(Box::new(child.stdout.take().expect("piped")));
        let err = drain(Box::new(child.stderr.take().expect("piped")));

        let mut timed_out = false;
        let status = loop {
            if let Some(status) = child.try_wait()? {
                break Some(status);
            }
            if start.elapsed() >= request.timeout {
                timed_out = true;
                let _ = child.kill();
                let _ = child.wait();
                break None;
            }
            std::thread::sleep(Duration::from_millis(20));
        };
        Ok(ExecOutcome {
            exit_code: status.and_then(|s| s.code()),
            timed_out,
            stdout: out.join().unwrap_or_default(),
            stderr: err.join().unwrap_or_default(),
            wall_time: start.elapsed(),
        })
    }
}

#[derive(Debug, Error)]
pub enum OrchestrationError {
    #[error("Jest is not resolved for this project")]
    Unresolved,
    #[error("SUITE level needs a test sequencer honoring {ORDER_FILE_ENV}; pass --sequencer=<path>")]
    NoSequencer,
    #[error("no artifact for {unit} reorder {reorder}")]
    MissingArtifact { unit: String, reorder: u32 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OrchestrationError + '_ {
    move |source| OrchestrationError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Everything about a campaign that is fixed before the first run.
#[derive(Debug, Clone)]
pub struct CampaignContext {
    pub campaign_id: String,
    /// Mirror results, order manifests and the campaign manifest go here.
    pub campaign_dir: PathBuf,
    /// Statically known tests per unit id.
    pub expected: BTreeMap<String, Vec<TestIdentity>>,
    /// Original source files per unit id (TEST/DESCRIBE).
    pub sources: BTreeMap<String, PathBuf>,
    /// Discovered files in their original order (SUITE).
    pub suite_files: Vec<PathBuf>,
    pub environment: Option<EnvironmentReport>,
}

#[derive(Debug, Serialize)]
struct OrderManifest<'a> {
    campaign_id: &'a str,
    ordered_paths: &'a [PathBuf],
}

/// Lays out every run of the campaign: `(order sets + 1) x rerun_count`
/// per unit, baseline first.
pub fn build_run_specs(
    plan: &PermutationPlan,
    artifacts: &[ReorderedArtifact],
    ctx: &CampaignContext,
    config: &Config,
) -> Result<Vec<RunSpec>, OrchestrationError> {
    let level = plan.level;
    let in_project = config.project_path.join(results_dir(level));
    let mirror = ctx.campaign_dir.join("results").join(results_dir(level));
    let mut specs = Vec::new();
    let mut used_names: HashMap<String, u32> = HashMap::new();
    let mut unique = |name: String| -> String {
        let n = used_names.entry(name.clone()).or_insert(0);
        *n += 1;
        if *n == 1 {
            name
        } else {
            format!("{name}~{n}")
        }
    };

    for unit in &plan.units {
        let mut orders: Vec<(u32, RunTarget, String)> = Vec::new();
        match level {
            Level::Suite => {
                let dir = ctx.campaign_dir.join("orders");
                orders.push((
                    0,
                    RunTarget::Manifest {
                        path: dir.join("order0.json"),
                        ordered_paths: ctx.suite_files.clone(),
                    },
                    String::new(),
                ));
                for set in &unit.order_sets {
                    let perm = &set
                        .order_for(PROJECT_CONTAINER)
                        .expect("suite order set has the project container")
                        .permutation;
                    orders.push((
                        set.reorder_index,
                        RunTarget::Manifest {
                            path: dir.join(format!("order{}.json", set.reorder_index)),
                            ordered_paths: perm.iter().map(|&i| ctx.suite_files[i].clone()).collect(),
                        },
                        String::new(),
                    ));
                }
            }
            Level::Test | Level::Describe => {
                let source = unit
                    .source_file
                    .clone()
                    .or_else(|| ctx.sources.get(&unit.unit_id).cloned())
                    .expect("file unit has a source");
                orders.push((0, RunTarget::File { path: source.clone() }, suite_name(&source)));
                for set in &unit.order_sets {
                    let artifact = artifacts
                        .iter()
                        .find(|a| a.source_file == source && a.reorder_index == set.reorder_index)
                        .ok_or_else(|| OrchestrationError::MissingArtifact {
                            unit: unit.unit_id.clone(),
                            reorder: set.reorder_index,
                        })?;
                    orders.push((
                        set.reorder_index,
                        RunTarget::File {
                            path: artifact.output_path.clone(),
                        },
                        suite_name(&artifact.output_path),
                    ));
                }
            }
        }

        for (reorder_index, target, suite) in orders {
            for rerun_index in 1..=config.rerun_count {
                let name = unique(result_file_name(level, &suite, reorder_index, rerun_index));
                specs.push(RunSpec {
                    level,
                    unit_id: unit.unit_id.clone(),
                    reorder_index,
                    rerun_index,
                    target: target.clone(),
                    output_path: in_project.join(name),
                    mirror_path: mirror.join(mirror_file_name(
                        level,
                        &unit.unit_id,
                        reorder_index,
                        rerun_index,
                    )),
                });
            }
        }
    }
    Ok(specs)
}

/// The Jest command line for one run.
pub fn jest_request(spec: &RunSpec, ctx: &CampaignContext, config: &Config) -> Result<ExecRequest, OrchestrationError> {
    let mut argv = config
        .jest_invocation
        .argv()
        .ok_or(OrchestrationError::Unresolved)?;
    argv.push("--json".into());
    argv.push(format!("--outputFile={}", spec.output_path.display()));
    argv.push("--runInBand".into());
    argv.push("--watchman=false".into());
    let mut env = vec![("CI".to_string(), "true".to_string())];
    match &spec.target {
        RunTarget::File { path } => {
            argv.push("--runTestsByPath".into());
            argv.push(path.display().to_string());
        }
        RunTarget::Manifest { path, .. } => {
            let sequencer = config.sequencer.as_ref().ok_or(OrchestrationError::NoSequencer)?;
            argv.push(format!("--testSequencer={}", sequencer.display()));
            argv.push("--runTestsByPath".into());
            argv.extend(ctx.suite_files.iter().map(|p| p.display().to_string()));
            env.push((ORDER_FILE_ENV.to_string(), path.display().to_string()));
        }
    }
    Ok(ExecRequest {
        argv,
        cwd: config.project_path.clone(),
        env,
        timeout: config.per_run_timeout,
    })
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct JestReport {
    #[serde(default)]
    test_results: Vec<JestFileResult>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct JestFileResult {
    name: String,
    #[serde(default)]
    assertion_results: Vec<JestAssertion>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct JestAssertion {
    #[serde(default)]
    ancestor_titles: Vec<String>,
    title: String,
    status: String,
}

/// Parses Jest's `--json` report into per-test outcomes. `source_of` maps a
/// reported file path to the original file's relative id; reported tests
/// matching an expected identity take that identity.
pub fn parse_jest_report(
    json: &str,
    expected: &[TestIdentity],
    source_of: &dyn Fn(&Path) -> Option<String>,
) -> Result<Vec<TestOutcome>, serde_json::Error> {
    let report: JestReport = serde_json::from_str(json)?;
    let by_key: HashMap<_, _> = expected.iter().map(|id| (id.key(), id)).collect();
    let mut outcomes: Vec<TestOutcome> = Vec::new();
    let mut assigned: HashSet<TestIdentity> = HashSet::new();
    for file in &report.test_results {
        let path = Path::new(&file.name);
        let file_rel = source_of(path).unwrap_or_else(|| file.name.clone());
        let mut occurrences: HashMap<(Vec<String>, String), u32> = HashMap::new();
        for a in &file.assertion_results {
            let counter = occurrences
                .entry((a.ancestor_titles.clone(), a.title.clone()))
                .or_insert(0);
            let occurrence = *counter;
            *counter += 1;
            let identity = by_key
                .get(&(file_rel.as_str(), a.ancestor_titles.as_slice(), a.title.as_str(), occurrence))
                .map(|id| (*id).clone())
                .unwrap_or_else(|| TestIdentity {
                    file: file_rel.clone(),
                    describe_path: a.ancestor_titles.clone(),
                    test_name: a.title.clone(),
                    modifier: Modifier::None,
                    occurrence,
                });
            if assigned.insert(identity.clone()) {
                outcomes.push(TestOutcome {
                    identity,
                    outcome: Outcome::from_jest_status(&a.status),
                });
            }
        }
    }
    Ok(outcomes)
}

fn expected_for<'c>(spec: &RunSpec, ctx: &'c CampaignContext) -> Vec<&'c TestIdentity> {
    match spec.level {
        Level::Suite => ctx.expected.values().flatten().collect(),
        _ => ctx
            .expected
            .get(&spec.unit_id)
            .map(|v| v.iter().collect())
            .unwrap_or_default(),
    }
}

/// Maps any path Jest may report back to the original file's id.
fn source_lookup<'c>(spec: &'c RunSpec, config: &'c Config) -> impl Fn(&Path) -> Option<String> + 'c {
    move |reported: &Path| {
        let canon = reported.canonicalize().unwrap_or_else(|_| reported.to_owned());
        match &spec.target {
            RunTarget::File { path } => {
                let target = path.canonicalize().unwrap_or_else(|_| path.clone());
                (canon == target || reported == path).then(|| spec.unit_id.clone())
            }
            RunTarget::Manifest { .. } => Some(crate::permute::relative_id(&config.project_path, &canon)),
        }
    }
}

/// Executes one Jest run and records its outcomes.
pub fn run_one(
    spec: &RunSpec,
    ctx: &CampaignContext,
    config: &Config,
    executor: &dyn Executor,
) -> Result<RunRecord, OrchestrationError> {
    if let Some(dir) = spec.output_path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    if let Some(dir) = spec.mirror_path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    if let RunTarget::Manifest { path, ordered_paths } = &spec.target {
        if !path.exists() {
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(io_err(dir))?;
            }
            let manifest = OrderManifest {
                campaign_id: &ctx.campaign_id,
                ordered_paths,
            };
            let text = serde_json::to_vec_pretty(&manifest).expect("serializable");
            crate::rewrite::write_atomic(path, &text).map_err(|e| match e {
                crate::rewrite::RewriteError::Io { path, source } => OrchestrationError::Io { path, source },
                other => OrchestrationError::Io {
                    path: path.clone(),
                    source: std::io::Error::other(other.to_string()),
                },
            })?;
        }
    }

    let request = jest_request(spec, ctx, config)?;
    let expected = expected_for(spec, ctx);
    let lookup = source_lookup(spec, config);

    let mut attempts = 0;
    let mut wall = Duration::ZERO;
    let mut last: Option<ExecOutcome> = None;
    let mut parsed: Option<Vec<TestOutcome>> = None;
    while attempts < 2 {
        attempts += 1;
        let _ = std::fs::remove_file(&spec.output_path);
        let outcome = match executor.execute(&request) {
            Ok(o) => o,
            Err(e) => {
                log::warn!("could not launch Jest for {}: {e}", spec.unit_id);
                last = Some(ExecOutcome::default());
                continue;
            }
        };
        wall += outcome.wall_time;
        let timed_out = outcome.timed_out;
        let log_path = spec.mirror_path.with_extension("log");
        let mut log = outcome.stdout.clone();
        log.extend_from_slice(&outcome.stderr);
        let _ = std::fs::write(&log_path, log);
        last = Some(outcome);
        if timed_out {
            break;
        }
        let expected_owned: Vec<TestIdentity> = expected.iter().map(|i| (*i).clone()).collect();
        if let Ok(text) = std::fs::read_to_string(&spec.output_path) {
            if let Ok(outcomes) = parse_jest_report(&text, &expected_owned, &lookup) {
                let _ = std::fs::copy(&spec.output_path, &spec.mirror_path);
                parsed = Some(outcomes);
                break;
            }
        }
        log::warn!(
            "run {} reorder {} rerun {}: no readable Jest JSON (attempt {attempts})",
            spec.unit_id,
            spec.reorder_index,
            spec.rerun_index
        );
    }
    let last = last.expect("at least one attempt");

    let fill = if last.timed_out {
        Outcome::Timeout
    } else {
        Outcome::Missing
    };
    let valid = last.timed_out || parsed.is_some();
    let mut outcomes = parsed.unwrap_or_default();
    for id in expected {
        if !outcomes.iter().any(|o| &o.identity == id) {
            outcomes.push(TestOutcome {
                identity: id.clone(),
                outcome: fill,
            });
        }
    }
    outcomes.sort_by(|a, b| a.identity.cmp(&b.identity));

    Ok(RunRecord {
        run_spec: spec.clone(),
        exit_status: last.exit_code,
        wall_time_ms: wall.as_millis() as u64,
        timed_out: last.timed_out,
        valid,
        attempts,
        outcomes,
        raw_json_path: spec.mirror_path.exists().then(|| spec.mirror_path.clone()),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRun {
    pub spec: RunSpec,
    pub valid: bool,
    pub timed_out: bool,
    pub exit_status: Option<i32>,
    pub wall_time_ms: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CampaignManifest<'a> {
    pub schema: u32,
    pub campaign_id: &'a str,
    pub level: Level,
    pub seed: u64,
    pub config: &'a Config,
    pub environment: Option<&'a EnvironmentReport>,
    pub plan: &'a PermutationPlan,
    /// `(order sets + 1) x reruns`, summed over units.
    pub expected_runs: usize,
    pub unreliable: bool,
    pub runs: Vec<ManifestRun>,
}

#[derive(Debug, Clone)]
pub struct CampaignRun {
    pub records: Vec<RunRecord>,
    pub unreliable: bool,
    pub manifest_path: PathBuf,
}

pub fn expected_run_count(plan: &PermutationPlan, rerun_count: u32) -> usize {
    plan.units
        .iter()
        .map(|u| (u.order_sets.len() + 1) * rerun_count as usize)
        .sum()
}

/// Runs every spec, sequentially unless `config.jobs > 1`, and writes the
/// campaign manifest.
pub fn run_campaign(
    plan: &PermutationPlan,
    artifacts: &[ReorderedArtifact],
    ctx: &CampaignContext,
    config: &Config,
    executor: &dyn Executor,
) -> Result<CampaignRun, OrchestrationError> {
    if plan.level == Level::Suite && config.sequencer.is_none() {
        return Err(OrchestrationError::NoSequencer);
    }
    let specs = build_run_specs(plan, artifacts, ctx, config)?;
    std::fs::create_dir_all(&ctx.campaign_dir).map_err(io_err(&ctx.campaign_dir))?;

    let records = if config.jobs <= 1 {
        specs
            .iter()
            .map(|s| run_one(s, ctx, config, executor))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<RunRecord, OrchestrationError>>>> =
            specs.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..config.jobs.min(specs.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(spec) = specs.get(i) else { break };
                    let r = run_one(spec, ctx, config, executor);
                    *slots[i].lock().expect("poisoned") = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().expect("poisoned").expect("every slot filled"))
            .collect::<Result<Vec<_>, _>>()?
    };

    let invalid = records.iter().filter(|r| !r.valid).count();
    let unreliable = !records.is_empty() && invalid as f64 / records.len() as f64 > UNRELIABLE_FRACTION;
    if unreliable {
        log::warn!("{invalid} of {} runs produced no usable results", records.len());
    }

    let manifest = CampaignManifest {
        schema: 1,
        campaign_id: &ctx.campaign_id,
        level: plan.level,
        seed: plan.seed,
        config,
        environment: ctx.environment.as_ref(),
        plan,
        expected_runs: expected_run_count(plan, config.rerun_count),
        unreliable,
        runs: records
            .iter()
            .map(|r| ManifestRun {
                spec: r.run_spec.clone(),
                valid: r.valid,
                timed_out: r.timed_out,
                exit_status: r.exit_status,
                wall_time_ms: r.wall_time_ms,
            })
            .collect(),
    };
    let manifest_path = ctx.campaign_dir.join(MANIFEST_FILE);
    let text = serde_json::to_vec_pretty(&manifest).expect("serializable");
    std::fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;

    Ok(CampaignRun {
        records,
        unreliable,
        manifest_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extract::parse_suite;

    #[test]
    fn result_names() {
        assert_eq!(result_file_name(Level::Test, "Foo", 0, 1), "testOutputFoo1");
        assert_eq!(result_file_name(Level::Describe, "Foodescribe2", 2, 3), "testOutputFoodescribe23");
        assert_eq!(result_file_name(Level::Suite, "", 2, 3), "testOutput23");
        assert_eq!(mirror_file_name(Level::Suite, "<project>", 2, 3), "testOutput2_3.json");
        assert_eq!(
            mirror_file_name(Level::Test, "src/Foo.test.js", 1, 2),
            "testOutputsrc__Foo.test.js_1_2.json"
        );
        assert_eq!(results_dir(Level::Test), "_extracted results_");
        assert_eq!(results_dir(Level::Describe), "_extracted results describes_");
        assert_eq!(results_dir(Level::Suite), "_extracted results test files_");
    }

    #[test]
    fn expected_identities_skip_unnamed_tests() {
        let src = "describe('d', () => {\n  test('a', () => {});\n  test('a', () => {});\n  test.each([1])('e %i', () => {});\n  test(`t${1}`, () => {});\n});\ndescribe.each([1])('de %i', () => { test('inner', () => {}); });\ntest.skip('s', () => {});\n";
        let m = parse_suite(Path::new("/p/x.test.js"), src.as_bytes()).unwrap();
        let ids = expected_identities(&m, "x.test.js");
        let summary: Vec<_> = ids
            .iter()
            .map(|i| (i.full_name(), i.occurrence, i.modifier))
            .collect();
        assert_eq!(
            summary,
            vec![
                ("d > a".to_string(), 0, Modifier::None),
                ("d > a".to_string(), 1, Modifier::None),
                ("s".to_string(), 0, Modifier::Skip),
            ]
        );
    }

    #[test]
    fn report_parsing_maps_to_identities() {
        let expected = vec![
            TestIdentity {
                file: "x.test.js".into(),
                describe_path: vec!["d".into()],
                test_name: "a".into(),
                modifier: Modifier::None,
                occurrence: 0,
            },
            TestIdentity {
                file: "x.test.js".into(),
                describe_path: vec![],
                test_name: "s".into(),
                modifier: Modifier::Skip,
                occurrence: 0,
            },
        ];
        let json = r#"{"testResults":[{"name":"/p/x1.test.js","assertionResults":[
            {"ancestorTitles":["d"],"title":"a","status":"failed"},
            {"ancestorTitles":["d"],"title":"e 1","status":"passed"},
            {"ancestorTitles":[],"title":"s","status":"pending"}]}]}"#;
        let outcomes = parse_jest_report(json, &expected, &|_| Some("x.test.js".into())).unwrap();
        assert_eq!(outcomes.len(), 3);
        assert_eq!(outcomes[0].identity, expected[0]);
        assert_eq!(outcomes[0].outcome, Outcome::Fail);
        assert_eq!(outcomes[1].identity.test_name, "e 1");
        assert_eq!(outcomes[1].identity.modifier, Modifier::None);
        assert_eq!(outcomes[2].identity, expected[1]);
        assert_eq!(outcomes[2].outcome, Outcome::Skip);
        assert!(parse_jest_report("{not json", &expected, &|_| None).is_err());
    }

    #[test]
    fn statuses() {
        assert_eq!(Outcome::from_jest_status("passed"), Outcome::Pass);
        assert_eq!(Outcome::from_jest_status("failed"), Outcome::Fail);
        assert_eq!(Outcome::from_jest_status("pending"), Outcome::Skip);
        assert_eq!(Outcome::from_jest_status("todo"), Outcome::Todo);
        assert!(Outcome::Timeout.is_fail_like() && Outcome::Missing.is_fail_like());
        assert!(!Outcome::Skip.is_fail_like());
    }

    #[test]
    fn process_executor_enforces_timeout() {
        let req = ExecRequest {
            argv: vec!["sleep".into(), "5".into()],
            cwd: std::env::temp_dir(),
            env: vec![],
            timeout: Duration::from_millis(200),
        };
        let out = ProcessExecutor.execute(&req).unwrap();
        assert!(out.timed_out);
        assert!(out.wall_time < Duration::from_secs(4));

        let req = ExecRequest {
            argv: vec!["sh".into(), "-c".into(), "echo hi; echo err >&2; exit 3".into()],
            timeout: Duration::from_secs(10),
            ..req
        };
        let out = ProcessExecutor.execute(&req).unwrap();
        assert_eq!(out.exit_code, Some(3));
        assert_eq!(out.stdout, b"hi\n");
        assert_eq!(out.stderr, b"err\n");
    }

    use crate::analysis::{build_matrix, classify, VerdictClass};
    use crate::config::JestInvocation;
    use crate::extract::tests_support::MOCK_POLLUTION;
    use crate::permute::{build_plan, PlanInput};
    use crate::rewrite::rewrite;

    /// Pretends to be Jest: `respond` gets the request and returns the JSON
    /// to write (or `None`) and whether the run timed out.
    struct FakeJest<F> {
        respond: F,
        calls: Mutex<Vec<ExecRequest>>,
    }

    impl<F: Fn(&ExecRequest) -> (Option<String>, bool) + Sync> Executor for FakeJest<F> {
        fn execute(&self, request: &ExecRequest) -> std::io::Result<ExecOutcome> {
            self.calls.lock().unwrap().push(request.clone());
            let (json, timed_out) = (self.respond)(request);
            if let Some(json) = json {
                let out = request
                    .argv
                    .iter()
                    .find_map(|a| a.strip_prefix("--outputFile="))
                    .unwrap();
                std::fs::write(out, json).unwrap();
            }
            Ok(ExecOutcome {
                exit_code: if timed_out { None } else { Some(0) },
                timed_out,
                ..ExecOutcome::default()
            })
        }
    }

    fn fake<F: Fn(&ExecRequest) -> (Option<String>, bool) + Sync>(respond: F) -> FakeJest<F> {
        FakeJest {
            respond,
            calls: Mutex::new(Vec::new()),
        }
    }

    /// A project holding the mock-pollution file, its plan, artifacts and context.
    fn logger_campaign(
        rerun: u32,
    ) -> (tempfile::TempDir, Config, PermutationPlan, Vec<ReorderedArtifact>, CampaignContext) {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().canonicalize().unwrap();
        let file = root.join("Logger.test.js");
        std::fs::write(&file, MOCK_POLLUTION).unwrap();
        let mut config = Config::new(&root, Level::Test, 3);
        config.rerun_count = rerun;
        config.jest_invocation = JestInvocation::Command {
            argv: vec!["fake-jest".into()],
        };
        let model = crate::extract::parse_file(&file).unwrap();
        let plan = build_plan(PlanInput::Models(std::slice::from_ref(&model)), &config);
        let artifacts: Vec<_> = plan.units[0]
            .order_sets
            .iter()
            .map(|s| rewrite(&model, s, Level::Test, 3, "Logger.test.js").unwrap())
            .collect();
        let ctx = CampaignContext {
            campaign_id: "c".into(),
            campaign_dir: root.join(".odre/c"),
            expected: BTreeMap::from([("Logger.test.js".to_string(), expected_identities(&model, "Logger.test.js"))]),
            sources: BTreeMap::new(),
            suite_files: vec![file],
            environment: None,
        };
        (dir, config, plan, artifacts, ctx)
    }

    /// Reports shared-mock behavior: the second test fails when it runs
    /// after the first.
    fn logger_report(request: &ExecRequest) -> String {
        let path = request.argv.last().unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let first = text.find("calls logger once").unwrap();
        let second = text.find("logger has not been called yet").unwrap();
        let victim = if first < second { "failed" } else { "passed" };
        serde_json::json!({"testResults": [{"name": path, "assertionResults": [
            {"ancestorTitles": [], "title": "calls logger once", "status": "passed"},
            {"ancestorTitles": [], "title": "logger has not been called yet", "status": victim},
        ]}]})
        .to_string()
    }

    #[test]
    fn campaign_with_fake_jest_finds_the_victim() {
        let (_d, config, plan, artifacts, ctx) = logger_campaign(3);
        let jest = fake(|r| (Some(logger_report(r)), false));
        let run = run_campaign(&plan, &artifacts, &ctx, &config, &jest).unwrap();
        assert_eq!(run.records.len(), expected_run_count(&plan, 3));
        assert_eq!(run.records.len(), 9);
        assert!(!run.unreliable);
        assert!(run.records.iter().all(|r| r.valid && r.attempts == 1));
        assert!(run.records.iter().all(|r| r.raw_json_path.as_ref().is_some_and(|p| p.exists())));

        let req = &jest.calls.lock().unwrap()[0];
        assert!(req.argv.contains(&"--json".to_string()));
        assert!(req.argv.contains(&"--runInBand".to_string()));
        assert_eq!(req.argv[req.argv.len() - 2], "--runTestsByPath");

        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&run.manifest_path).unwrap()).unwrap();
        assert_eq!(manifest["runs"].as_array().unwrap().len(), 9);
        assert_eq!(manifest["expected_runs"], 9);

        let verdicts = classify(&build_matrix(&run.records).unwrap(), 0.2);
        let classes: Vec<_> = verdicts.iter().map(|v| (v.identity.test_name.as_str(), v.class)).collect();
        assert_eq!(
            classes,
            vec![
                ("calls logger once", VerdictClass::StablePass),
                ("logger has not been called yet", VerdictClass::OrderDependentCandidate),
            ]
        );
    }

    #[test]
    fn parallel_runs_match_sequential() {
        let (_d, mut config, plan, artifacts, ctx) = logger_campaign(2);
        let jest = fake(|r| (Some(logger_report(r)), false));
        let strip = |mut rs: Vec<RunRecord>| {
            rs.iter_mut().for_each(|r| r.wall_time_ms = 0);
            rs
        };
        let serial = strip(run_campaign(&plan, &artifacts, &ctx, &config, &jest).unwrap().records);
        config.jobs = 4;
        let parallel = strip(run_campaign(&plan, &artifacts, &ctx, &config, &jest).unwrap().records);
        assert_eq!(serial, parallel);
    }

    #[test]
    fn timeouts_mark_tests_timeout() {
        let (_d, config, plan, artifacts, ctx) = logger_campaign(1);
        let jest = fake(|_| (None, true));
        let run = run_campaign(&plan, &artifacts, &ctx, &config, &jest).unwrap();
        assert_eq!(jest.calls.lock().unwrap().len(), run.records.len());
        for r in &run.records {
            assert!(r.valid && r.timed_out);
            assert!(r.outcomes.iter().all(|o| o.outcome == Outcome::Timeout));
            assert_eq!(r.outcomes.len(), 2);
        }
    }

    #[test]
    fn unreadable_json_is_retried_then_invalid() {
        let (_d, config, plan, artifacts, ctx) = logger_campaign(1);
        let jest = fake(|_| (Some("{ truncated".into()), false));
        let run = run_campaign(&plan, &artifacts, &ctx, &config, &jest).unwrap();
        assert_eq!(jest.calls.lock().unwrap().len(), 2 * run.records.len());
        assert!(run.records.iter().all(|r| !r.valid && r.attempts == 2));
        assert!(run.unreliable);
        let verdicts = classify(&build_matrix(&run.records).unwrap(), 0.2);
        assert!(verdicts.iter().all(|v| v.class == VerdictClass::Inconclusive));
    }

    #[test]
    fn retry_recovers_from_one_bad_run() {
        let (_d, config, plan, artifacts, ctx) = logger_campaign(1);
        let calls = AtomicUsize::new(0);
        let jest = fake(|r| {
            let json = if calls.fetch_add(1, Ordering::SeqCst) == 0 { None } else { Some(logger_report(r)) };
            (json, false)
        });
        let run = run_campaign(&plan, &artifacts, &ctx, &config, &jest).unwrap();
        assert_eq!(run.records[0].attempts, 2);
        assert!(run.records.iter().all(|r| r.valid));
    }

    #[test]
    fn suite_level_uses_the_sequencer_and_order_file() {
        let (_d, mut config, _, _, mut ctx) = logger_campaign(1);
        let other = config.project_path.join("Other.test.js");
        std::fs::write(&other, "test('x', () => {});").unwrap();
        ctx.suite_files.push(other.clone());
        config.level = Level::Suite;
        config.reorder_count = 5;
        let plan = build_plan(PlanInput::Files(&ctx.suite_files), &config);
        let jest = fake(|_| (Some(r#"{"testResults": []}"#.into()), false));
        assert!(matches!(
            run_campaign(&plan, &[], &ctx, &config, &jest),
            Err(OrchestrationError::NoSequencer)
        ));

        config.sequencer = Some("/opt/shim.js".into());
        let run = run_campaign(&plan, &[], &ctx, &config, &jest).unwrap();
        assert_eq!(run.records.len(), 3);
        let names: Vec<_> = run
            .records
            .iter()
            .map(|r| r.run_spec.output_path.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, ["testOutput01", "testOutput11", "testOutput21"]);
        assert!(run.records[0].run_spec.output_path.parent().unwrap().ends_with(SUITE_RESULTS_DIR));

        let calls = jest.calls.lock().unwrap();
        let req = calls.last().unwrap();
        assert!(req.argv.contains(&"--testSequencer=/opt/shim.js".to_string()));
        let (_, order_file) = req.env.iter().find(|(k, _)| k == ORDER_FILE_ENV).unwrap();
        let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(order_file).unwrap()).unwrap();
        assert_eq!(manifest["campaign_id"], "c");
        assert_eq!(manifest["ordered_paths"].as_array().unwrap().len(), 2);
        // All three runs reported tests for the expected identities as missing.
        assert!(run.records.iter().all(|r| r.outcomes.iter().all(|o| o.outcome == Outcome::Missing)));
    }

}
