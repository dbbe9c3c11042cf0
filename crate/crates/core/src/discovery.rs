//! Test-file discovery through Jest's `--listTests`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Config;
use crate::rewrite::file_has_marker;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DiscoveryMethod {
    ListTests,
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestFileInventory {
    pub project_path: PathBuf,
    /// Absolute, canonical, sorted, duplicate-free.
    pub files: Vec<PathBuf>,
    pub discovery_method: DiscoveryMethod,
    /// Members of `files` that resolve outside the project root.
    pub outside_project: Vec<PathBuf>,
    /// Files Jest listed that carry an odre provenance marker.
    pub excluded_generated: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

impl TestFileInventory {
    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum DiscoveryError {
    #[error("Jest is not resolved for this project")]
    Unresolved,
    #[error("could not start Jest: {0}")]
    Spawn(#[from] std::io::Error),
    #[error("`jest --listTests` exited with {status}:\n{stderr}")]
    JestFailed { status: String, stderr: String },
}

/// Runs `jest --listTests` in the project and parses its output.
pub fn list_test_files(config: &Config) -> Result<TestFileInventory, DiscoveryError> {
    let mut cmd = config
        .jest_invocation
        .command(&config.project_path)
        .ok_or(DiscoveryError::Unresolved)?;
    let out = cmd.arg("--listTests").env("CI", "true").output()?;
    if !out.status.success() {
        return Err(DiscoveryError::JestFailed {
            status: out.status.to_string(),
            stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
        });
    }
    let inventory = parse_list_output(&String::from_utf8_lossy(&out.stdout), &config.project_path);
    for w in &inventory.warnings {
        log::warn!("{w}");
    }
    Ok(inventory)
}

/// Keeps lines that name existing files, resolving relative paths against
/// the project, and drops generated files.
pub fn parse_list_output(stdout: &str, project: &Path) -> TestFileInventory {
    let root = project.canonicalize().unwrap_or_else(|_| project.to_owned());
    let mut files = BTreeSet::new();
    let mut excluded = BTreeSet::new();
    for line in stdout.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let candidate = Path::new(line);
        let candidate = if candidate.is_absolute() {
            candidate.to_owned()
        } else {
            root.join(candidate)
        };
        if !candidate.is_file() {
            continue;
        }
        let resolved = candidate.canonicalize().unwrap_or(candidate);
        if file_has_marker(&resolved) {
            excluded.insert(resolved);
        } else {
            files.insert(resolved);
        }
    }

    let files: Vec<PathBuf> = files.into_iter().collect();
    let outside_project: Vec<PathBuf> = files
        .iter()
        .filter(|f| !f.starts_with(&root))
        .cloned()
        .collect();
    let mut warnings = Vec::new();
    for f in &outside_project {
        warnings.push(format!("{} lies outside the project root", f.display()));
    }
    if !excluded.is_empty() {
        warnings.push(format!(
            "ignored {} file(s) generated by an earlier run; delete them or rerun without --keep-artifacts",
            excluded.len()
        ));
    }
    let discovery_method = if files.is_empty() {
        warnings.push(format!(
            "Jest lists no test files in {}; nothing to do",
            root.display()
        ));
        DiscoveryMethod::None
    } else {
        DiscoveryMethod::ListTests
    };
    TestFileInventory {
        project_path: root,
        files,
        discovery_method,
        outside_project,
        excluded_generated: excluded.into_iter().collect(),
        warnings,
    }
}
