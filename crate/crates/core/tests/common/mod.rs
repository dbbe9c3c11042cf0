#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use odre::config::{Config, Level};
use tempfile::TempDir;

pub const JEST_VERSION: &str = "29.7.0";

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Directory holding `node_modules/jest`, installed on first use.
/// `ODRE_JEST_RUNTIME` overrides the location.
pub fn jest_runtime() -> &'static Path {
    static RUNTIME: OnceLock<PathBuf> = OnceLock::new();
    RUNTIME.get_or_init(|| {
        let dir = std::env::var_os("ODRE_JEST_RUNTIME")
            .map(PathBuf::from)
            .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target/jest-runtime"));
        if !dir.join("node_modules/jest/package.json").is_file() {
            install_jest(&dir);
        }
        dir.canonicalize().expect("jest runtime directory")
    })
}

fn install_jest(dir: &Path) {
    let parent = dir.parent().expect("runtime has a parent");
    std::fs::create_dir_all(parent).unwrap();
    let staging = tempfile::tempdir_in(parent).unwrap();
    std::fs::write(
        staging.path().join("package.json"),
        r#"{"name":"odre-jest-runtime","private":true}"#,
    )
    .unwrap();
    let status = Command::new("npm")
        .args(["install", "--no-audit", "--no-fund", "--loglevel=error"])
        .arg(format!("jest@{JEST_VERSION}"))
        .current_dir(staging.path())
        .status()
        .expect("npm is required to install Jest for the integration tests");
    assert!(status.success(), "npm install jest@{JEST_VERSION} failed");
    let staged = staging.keep();
    if std::fs::rename(&staged, dir).is_err() {
        // Another process finished first.
        let _ = std::fs::remove_dir_all(&staged);
    }
}

fn copy_tree(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_tree(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), &target).unwrap();
        }
    }
}

/// A fresh copy of a fixture project wired to the Jest runtime.
pub struct Project {
    _dir: TempDir,
    pub root: PathBuf,
}

impl Project {
    pub fn new(fixture: &str) -> Self {
        let runtime = jest_runtime();
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().canonicalize().unwrap().join(fixture);
        copy_tree(&fixtures_dir().join(fixture), &root);
        std::os::unix::fs::symlink(runtime.join("node_modules"), root.join("node_modules")).unwrap();
        Project { _dir: dir, root }
    }

    pub fn config(&self, level: Level, seed: u64) -> Config {
        Config::new(&self.root, level, seed)
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Runs Jest on `paths` with JSON output and returns the parsed report.
    pub fn jest_json(&self, paths: &[PathBuf], extra: &[&str]) -> serde_json::Value {
        let out = self.root.join(".odre-test-report.json");
        let status = Command::new(self.root.join("node_modules/.bin/jest"))
            .arg("--json")
            .arg(format!("--outputFile={}", out.display()))
            .args(extra)
            .arg("--runTestsByPath")
            .args(paths)
            .current_dir(&self.root)
            .env("CI", "true")
            .output()
            .unwrap();
        let text = std::fs::read_to_string(&out).unwrap_or_else(|_| {
            panic!("jest wrote no report:\n{}", String::from_utf8_lossy(&status.stderr))
        });
        std::fs::remove_file(&out).unwrap();
        serde_json::from_str(&text).unwrap()
    }
}

/// Test files under `root`, relative, sorted.
pub fn files_under(root: &Path, keep: &dyn Fn(&Path) -> bool) -> Vec<String> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let entry = entry.unwrap();
            let ty = entry.file_type().unwrap();
            if ty.is_dir() {
                walk(&entry.path(), out);
            } else if ty.is_file() {
                out.push(entry.path());
            }
        }
    }
    let mut all = Vec::new();
    walk(root, &mut all);
    let mut rel: Vec<String> = all
        .into_iter()
        .filter(|p| keep(p))
        .map(|p| p.strip_prefix(root).unwrap().to_string_lossy().into_owned())
        .collect();
    rel.sort();
    rel
}
