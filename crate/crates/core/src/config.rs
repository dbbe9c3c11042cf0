//! Command-line parsing, campaign configuration, and environment checks.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use clap::{Parser, ValueEnum};
use semver::Version;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_RERUNS: u32 = 10;
pub const DEFAULT_REORDERS: u32 = 10;
pub const DEFAULT_TIMEOUT_SECS: u64 = 600;
pub const DEFAULT_INCONCLUSIVE_THRESHOLD: f64 = 0.2;

/// Oldest Jest with `--listTests`.
pub const MIN_SUPPORTED_JEST: Version = Version::new(20, 0, 0);
pub const VALIDATED_NODE: Version = Version::new(18, 16, 1);
pub const VALIDATED_JEST_MAJOR: u64 = 27;

const JEST_CONFIG_FILES: &[&str] = &[
    "package.json",
    "jest.config.js",
    "jest.config.ts",
    "jest.config.mjs",
    "jest.config.cjs",
    "jest.config.json",
];

/// Structural level at which tests are reordered.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, ValueEnum,
)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    /// Tests within each describe block (and the file's top-level scope).
    Test,
    /// Top-level describe blocks within a file.
    Describe,
    /// Test files within the project.
    Suite,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Test => "test",
            Level::Describe => "describe",
            Level::Suite => "suite",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How Jest is launched inside the target project.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JestInvocation {
    /// `node_modules/.bin/jest` of the project itself.
    Local { binary: PathBuf },
    /// User-supplied `--jest-cmd`, split on whitespace.
    Command { argv: Vec<String> },
    /// Nothing found; `attempted` lists the resolution steps that were tried.
    Unresolved { attempted: Vec<String> },
}

impl JestInvocation {
    /// Program and leading arguments, or `None` when unresolved.
    pub fn argv(&self) -> Option<Vec<String>> {
        match self {
            JestInvocation::Local { binary } => Some(vec![binary.display().to_string()]),
            JestInvocation::Command { argv } => Some(argv.clone()),
            JestInvocation::Unresolved { .. } => None,
        }
    }

    /// A `Command` ready for extra Jest arguments, running in `project`.
    pub fn command(&self, project: &Path) -> Option<Command> {
        let argv = self.argv()?;
        let (program, rest) = argv.split_first()?;
        let mut cmd = Command::new(program);
        cmd.args(rest).current_dir(project);
        Some(cmd)
    }
}

/// Immutable campaign configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Config {
    pub project_path: PathBuf,
    pub rerun_count: u32,
    pub reorder_count: u32,
    pub level: Level,
    pub seed: u64,
    /// True when the seed was drawn from entropy rather than given.
    pub seed_was_drawn: bool,
    pub jest_invocation: JestInvocation,
    #[serde(serialize_with = "serialize_secs")]
    pub per_run_timeout: Duration,
    pub keep_artifacts: bool,
    pub fail_on_od: bool,
    pub jobs: usize,
    pub inconclusive_threshold: f64,
    pub nested_describes: bool,
    pub sequencer: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

fn serialize_secs<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u64(d.as_secs())
}

impl Config {
    /// Configuration with defaults for everything but the project path.
    /// Performs no validation or Jest resolution.
    pub fn new(project_path: impl Into<PathBuf>, level: Level, seed: u64) -> Self {
        let project_path = project_path.into();
        let jest_invocation = resolve_jest(&project_path, None);
        Config {
            project_path,
            rerun_count: DEFAULT_RERUNS,
            reorder_count: DEFAULT_REORDERS,
            level,
            seed,
            seed_was_drawn: false,
            jest_invocation,
            per_run_timeout: Duration::from_secs(DEFAULT_TIMEOUT_SECS),
            keep_artifacts: false,
            fail_on_od: false,
            jobs: 1,
            inconclusive_threshold: DEFAULT_INCONCLUSIVE_THRESHOLD,
            nested_describes: false,
            sequencer: None,
            output_dir: None,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "odre",
    version,
    about = "Reveal order-dependent tests in a Jest project by reordering and rerunning them"
)]
struct Args {
    /// Root directory of the target project.
    #[arg(long = "project_path", value_name = "PATH")]
    project_path: Option<PathBuf>,

    /// Executions per generated order.
    #[arg(long, value_name = "N", allow_negative_numbers = true)]
    rerun: Option<i64>,

    /// Number of orders to generate per container.
    #[arg(long, value_name = "N", allow_negative_numbers = true)]
    reorder: Option<i64>,

    /// Reordering level.
    #[arg(long, value_enum, default_value_t = Level::Test)]
    level: Level,

    /// Seed for permutation generation (drawn and echoed when omitted).
    #[arg(long)]
    seed: Option<u64>,

    /// Command used to launch Jest, e.g. "npx jest".
    #[arg(long = "jest-cmd", value_name = "CMD")]
    jest_cmd: Option<String>,

    /// Wall-clock limit per Jest invocation, in seconds.
    #[arg(long, value_name = "SECONDS", default_value_t = DEFAULT_TIMEOUT_SECS)]
    timeout: u64,

    /// Keep generated test files after the campaign.
    #[arg(long = "keep-artifacts")]
    keep_artifacts: bool,

    /// Exit with status 1 when an order-dependent candidate is found.
    #[arg(long = "fail-on-od")]
    fail_on_od: bool,

    /// Concurrent Jest processes (1 = sequential).
    #[arg(long, default_value_t = 1)]
    jobs: usize,

    /// Fraction of invalid runs above which a test is INCONCLUSIVE.
    #[arg(long = "inconclusive-threshold", default_value_t = DEFAULT_INCONCLUSIVE_THRESHOLD)]
    inconclusive_threshold: f64,

    /// At DESCRIBE level, also reorder nested describe blocks.
    #[arg(long = "nested-describes")]
    nested_describes: bool,

    /// Jest test sequencer honoring ODRE_ORDER_FILE (SUITE level).
    #[arg(long, env = "ODRE_SEQUENCER", value_name = "PATH")]
    sequencer: Option<PathBuf>,

    /// Directory for campaign manifests and reports (default: <project>/.odre).
    #[arg(long = "output-dir", value_name = "PATH")]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    /// `--help` or `--version`; not a failure.
    #[error("{0}")]
    Display(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("invalid value: {0}")]
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Display(_) => 0,
            CliError::Usage(_) | CliError::Validation(_) => 2,
        }
    }
}

/// Parses the raw argument vector (including the program name).
pub fn parse_cli<I, T>(args: I) -> Result<Config, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = Args::try_parse_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            CliError::Display(e.to_string())
        }
        _ => CliError::Usage(e.to_string()),
    })?;

    let project_path = args
        .project_path
        .ok_or_else(|| CliError::Usage("--project_path=<path> is required".into()))?;
    if !project_path.is_dir() {
        return Err(CliError::Usage(format!(
            "project path {} does not exist or is not a directory",
            project_path.display()
        )));
    }
    let project_path = project_path
        .canonicalize()
        .map_err(|e| CliError::Usage(format!("{}: {e}", project_path.display())))?;
    if !JEST_CONFIG_FILES
        .iter()
        .any(|f| project_path.join(f).is_file())
    {
        return Err(CliError::Usage(format!(
            "{} has no package.json or jest.config.* file",
            project_path.display()
        )));
    }

    let rerun_count = positive("--rerun", args.rerun, DEFAULT_RERUNS)?;
    let reorder_count = positive("--reorder", args.reorder, DEFAULT_REORDERS)?;
    if args.timeout == 0 {
        return Err(CliError::Validation("--timeout must be at least 1 second".into()));
    }
    if args.jobs == 0 {
        return Err(CliError::Validation("--jobs must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&args.inconclusive_threshold) {
        return Err(CliError::Validation(
            "--inconclusive-threshold must lie in [0, 1]".into(),
        ));
    }

    let (seed, seed_was_drawn) = match args.seed {
        Some(s) => (s, false),
        None => (rand::random::<u64>(), true),
    };

    let jest_invocation = resolve_jest(&project_path, args.jest_cmd.as_deref());

    Ok(Config {
        project_path,
        rerun_count,
        reorder_count,
        level: args.level,
        seed,
        seed_was_drawn,
        jest_invocation,
        per_run_timeout: Duration::from_secs(args.timeout),
        keep_artifacts: args.keep_artifacts,
        fail_on_od: args.fail_on_od,
        jobs: args.jobs,
        inconclusive_threshold: args.inconclusive_threshold,
        nested_describes: args.nested_describes,
        sequencer: args.sequencer,
        output_dir: args.output_dir,
    })
}

fn positive(flag: &str, value: Option<i64>, default: u32) -> Result<u32, CliError> {
    match value {
        None => Ok(default),
        Some(v) if v >= 1 && v <= i64::from(u32::MAX) => Ok(v as u32),
        Some(v) => Err(CliError::Validation(format!(
            "{flag} must be a positive integer, got {v}"
        ))),
    }
}

/// Resolves Jest: an explicit command wins, then the project's local binary.
pub fn resolve_jest(project: &Path, jest_cmd: Option<&str>) -> JestInvocation {
    if let Some(cmd) = jest_cmd {
        let argv: Vec<String> = cmd.split_whitespace().map(str::to_owned).collect();
        if !argv.is_empty() {
            return JestInvocation::Command { argv };
        }
    }
    let binary = project.join("node_modules").join(".bin").join("jest");
    if binary.exists() {
        return JestInvocation::Local { binary };
    }
    let mut attempted = vec![
        "--jest-cmd: not given".to_string(),
        format!("{}: not found", binary.display()),
    ];
    if package_test_script_mentions_jest(project) {
        attempted.push(
            "package.json scripts.test mentions jest, but dependencies are not installed \
             (run npm install) or pass --jest-cmd"
                .to_string(),
        );
    } else {
        attempted.push("package.json scripts.test: no jest invocation".to_string());
    }
    JestInvocation::Unresolved { attempted }
}

fn package_test_script_mentions_jest(project: &Path) -> bool {
    std::fs::read_to_string(project.join("package.json"))
        .ok()
        .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
        .and_then(|v| v.pointer("/scripts/test")?.as_str().map(|s| s.contains("jest")))
        .unwrap_or(false)
}

/// Detected toolchain versions and support findings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvironmentReport {
    pub jest_version: Version,
    pub node_version: Option<Version>,
    pub supported: bool,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Error)]
pub enum EnvironmentError {
    #[error("Jest could not be resolved in the project; tried: {}", attempted.join("; "))]
    JestNotFound { attempted: Vec<String> },
    #[error("could not determine the Jest version ({0})")]
    VersionUnreadable(String),
}

/// Detects the Jest and Node versions the campaign will use.
pub fn check_environment(config: &Config) -> Result<EnvironmentReport, EnvironmentError> {
    let jest_version = match &config.jest_invocation {
        JestInvocation::Unresolved { attempted } => {
            return Err(EnvironmentError::JestNotFound {
                attempted: attempted.clone(),
            })
        }
        JestInvocation::Local { .. } => {
            match installed_package_version(&config.project_path, "jest") {
                Some(v) => v,
                None => jest_version_from_cli(config)?,
            }
        }
        JestInvocation::Command { .. } => jest_version_from_cli(config)?,
    };
    let node_version = command_version("node", &config.project_path);
    Ok(assess(jest_version, node_version))
}

/// Applies the support rules to detected versions.
pub fn assess(jest_version: Version, node_version: Option<Version>) -> EnvironmentReport {
    let mut diagnostics = Vec::new();
    let supported = jest_version >= MIN_SUPPORTED_JEST;
    if !supported {
        diagnostics.push(format!(
            "Jest {jest_version} is older than {MIN_SUPPORTED_JEST}: it has no --listTests option, \
             which test discovery depends on"
        ));
    } else if jest_version.major < VALIDATED_JEST_MAJOR {
        diagnostics.push(format!(
            "warning: Jest {jest_version} is supported but older than the validated Jest {VALIDATED_JEST_MAJOR}.x"
        ));
    }
    match &node_version {
        None => diagnostics.push("warning: could not determine the Node.js version".into()),
        Some(v) if *v != VALIDATED_NODE => diagnostics.push(format!(
            "warning: Node.js {v} differs from the validated Node.js {VALIDATED_NODE}"
        )),
        Some(_) => {}
    }
    EnvironmentReport {
        jest_version,
        node_version,
        supported,
        diagnostics,
    }
}

fn installed_package_version(project: &Path, package: &str) -> Option<Version> {
    let manifest = project
        .join("node_modules")
        .join(package)
        .join("package.json");
    let text = std::fs::read_to_string(manifest).ok()?;
    let value: serde_json::Value = serde_json::from_str(&text).ok()?;
    parse_version(value.get("version")?.as_str()?)
}

fn jest_version_from_cli(config: &Config) -> Result<Version, EnvironmentError> {
    let mut cmd = config
        .jest_invocation
        .command(&config.project_path)
        .expect("resolved invocation");
    let out = cmd
        .arg("--version")
        .output()
        .map_err(|e| EnvironmentError::VersionUnreadable(e.to_string()))?;
    let text = String::from_utf8_lossy(&out.stdout);
    text.lines()
        .rev()
        .find_map(parse_version)
        .ok_or_else(|| {
            EnvironmentError::VersionUnreadable(format!(
                "`jest --version` printed {:?}",
                text.trim()
            ))
        })
}

fn command_version(program: &str, cwd: &Path) -> Option<Version> {
    let out = Command::new(program)
        .arg("--version")
        .current_dir(cwd)
        .output()
        .ok()?;
    parse_version(String::from_utf8_lossy(&out.stdout).trim())
}

/// Parses `18.16.1`, `v18.16.1`, or a bare `27` / `27.1`.
pub fn parse_version(text: &str) -> Option<Version> {
    let t = text.trim().trim_start_matches('v');
    if let Ok(v) = Version::parse(t) {
        return Some(v);
    }
    let mut parts = t.split('.').map(|p| p.parse::<u64>());
    let major = parts.next()?.ok()?;
    let minor = parts.next().transpose().ok()?.unwrap_or(0);
    let patch = parts.next().transpose().ok()?.unwrap_or(0);
    Some(Version::new(major, minor, patch))
}
