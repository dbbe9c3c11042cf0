//! Materializing order sets as generated test files.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Level;
use crate::extract::{Item, NodeKind, TestSuiteModel};
use crate::permute::{is_bijection, OrderSet};

/// Start of the first-line comment carried by every generated file.
pub const MARKER_PREFIX: &str = "// @odre generated";

/// Extensions that may follow `.test` / `.spec` in a test file name.
const SCRIPT_EXTENSIONS: &[&str] = &["js", "jsx", "ts", "tsx", "mjs", "cjs", "mts", "cts"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReorderedArtifact {
    pub source_file: PathBuf,
    pub reorder_index: u32,
    pub level: Level,
    pub output_path: PathBuf,
    pub order_set: OrderSet,
    pub provenance_marker: String,
}

#[derive(Debug, Error)]
pub enum RewriteError {
    #[error("{path}: inconsistent model: {detail}")]
    Invariant { path: PathBuf, detail: String },
    #[error("refusing to overwrite {0}: it exists and was not generated by odre")]
    Collision(PathBuf),
    #[error("{0} level has no per-file artifacts")]
    UnsupportedLevel(Level),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub fn marker_line(level: Level, reorder_index: u32, seed: u64, source_rel: &str) -> String {
    format!("{MARKER_PREFIX} level={level} reorder={reorder_index} seed={seed} source={source_rel}")
}

/// Whether `bytes` begin with a provenance marker (after an optional
/// `#!` line).
pub fn has_marker(bytes: &[u8]) -> bool {
    let mut lines = bytes.split(|b| *b == b'\n');
    match lines.next() {
        Some(first) if first.starts_with(b"#!") => {
            lines.next().is_some_and(|l| l.starts_with(MARKER_PREFIX.as_bytes()))
        }
        Some(first) => first.starts_with(MARKER_PREFIX.as_bytes()),
        None => false,
    }
}

/// Reads just enough of `path` to check for the marker.
pub fn file_has_marker(path: &Path) -> bool {
    use std::io::Read;
    let mut buf = vec![0u8; 4096];
    let Ok(mut f) = std::fs::File::open(path) else {
        return false;
    };
    let mut filled = 0;
    while filled < buf.len() {
        match f.read(&mut buf[filled..]) {
            Ok(0) | Err(_) => break,
            Ok(n) => filled += n,
        }
    }
    has_marker(&buf[..filled])
}

/// Removes the marker line, returning the bytes the rewriter produced.
pub fn strip_marker(bytes: &[u8]) -> &[u8] {
    if !has_marker(bytes) || bytes.starts_with(b"#!") {
        return bytes;
    }
    match bytes.iter().position(|b| *b == b'\n') {
        Some(nl) => &bytes[nl + 1..],
        None => &[],
    }
}

fn insert_marker(body: &[u8], marker: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(body.len() + marker.len() + 1);
    let split = if body.starts_with(b"#!") {
        body.iter().position(|b| *b == b'\n').map_or(body.len(), |p| p + 1)
    } else {
        0
    };
    out.extend_from_slice(&body[..split]);
    if split == body.len() && split > 0 && !body.ends_with(b"\n") {
        out.push(b'\n');
    }
    out.extend_from_slice(marker.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(&body[split..]);
    out
}

/// Splits a file name into (base, test suffix). The suffix is `.test.js`,
/// `.spec.tsx`, etc.; `None` when the name has no such suffix.
fn split_test_suffix(file_name: &str) -> Option<(&str, &str)> {
    for marker in [".test.", ".spec."] {
        if let Some(pos) = file_name.rfind(marker) {
            let ext = &file_name[pos + marker.len()..];
            if SCRIPT_EXTENSIONS.contains(&ext) && pos > 0 {
                return Some((&file_name[..pos], &file_name[pos..]));
            }
        }
    }
    None
}

/// Output path of a generated file; the second value is a warning when the
/// source name has no recognized test suffix.
pub fn name_artifact(
    source_file: &Path,
    level: Level,
    reorder_index: u32,
) -> Result<(PathBuf, Option<String>), RewriteError> {
    let tag = match level {
        Level::Test => reorder_index.to_string(),
        Level::Describe => format!("describe{reorder_index}"),
        Level::Suite => return Err(RewriteError::UnsupportedLevel(level)),
    };
    let file_name = source_file
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let (name, warning) = match split_test_suffix(&file_name) {
        Some((base, suffix)) => (format!("{base}{tag}{suffix}"), None),
        None => {
            let warning = Some(format!(
                "{}: no .test/.spec suffix; artifact may not match Jest's testMatch",
                source_file.display()
            ));
            match file_name.rfind('.') {
                Some(dot) if dot > 0 => (
                    format!("{}{tag}{}", &file_name[..dot], &file_name[dot..]),
                    warning,
                ),
                _ => (format!("{file_name}{tag}"), warning),
            }
        }
    };
    Ok((source_file.with_file_name(name), warning))
}

/// Suite name used in result file names: the file name without its test
/// suffix (`Foo.test.js` -> `Foo`, `Foo1.test.js` -> `Foo1`).
pub fn suite_name(file: &Path) -> String {
    let file_name = file
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    match split_test_suffix(&file_name) {
        Some((base, _)) => base.to_string(),
        None => match file_name.rfind('.') {
            Some(dot) if dot > 0 => file_name[..dot].to_string(),
            _ => file_name,
        },
    }
}

fn unit_kind(level: Level) -> Result<NodeKind, RewriteError> {
    match level {
        Level::Test => Ok(NodeKind::Test),
        Level::Describe => Ok(NodeKind::Describe),
        Level::Suite => Err(RewriteError::UnsupportedLevel(level)),
    }
}

/// Slot mapping for every container the order set touches, keyed by
/// container path.
type Arrangement = Vec<(Vec<usize>, Vec<usize>)>;

fn arrangement(
    model: &TestSuiteModel,
    order_set: &OrderSet,
    level: Level,
) -> Result<Arrangement, RewriteError> {
    let kind = unit_kind(level)?;
    let invariant = |detail: String| RewriteError::Invariant {
        path: model.file_path.clone(),
        detail,
    };
    let containers = model.containers();
    let mut out = Vec::new();
    for order in &order_set.orders {
        let path = parse_container_path(&order.container_id)
            .ok_or_else(|| invariant(format!("bad container id {}", order.container_id)))?;
        let container = containers
            .iter()
            .find(|c| c.path == path)
            .ok_or_else(|| invariant(format!("no container {}", order.container_id)))?;
        check_tiling(container.items).map_err(&invariant)?;
        let units = container.units(kind);
        if units.len() != order.permutation.len() || !is_bijection(&order.permutation) {
            return Err(invariant(format!(
                "{}: permutation {:?} does not fit {} unit(s)",
                order.container_id,
                order.permutation,
                units.len()
            )));
        }
        let mut mapping: Vec<usize> = (0..container.items.len()).collect();
        for (i, &p) in order.permutation.iter().enumerate() {
            mapping[units[i]] = units[p];
        }
        out.push((path, mapping));
    }
    Ok(out)
}

fn check_tiling(items: &[Item]) -> Result<(), String> {
    for pair in items.windows(2) {
        let (a, b) = (pair[0].span(), pair[1].span());
        if a.end != b.start || a.start >= a.end {
            return Err(format!(
                "sibling spans {}..{} and {}..{} do not tile",
                a.start, a.end, b.start, b.end
            ));
        }
    }
    Ok(())
}

/// Inverse of [`crate::permute::container_id`].
pub fn parse_container_path(container_id: &str) -> Option<Vec<usize>> {
    let (_, path) = container_id.rsplit_once('#')?;
    if path.is_empty() {
        return Some(Vec::new());
    }
    path.split('/').map(|p| p.parse().ok()).collect()
}

/// The reordered file content, without the provenance marker.
pub fn render_reordered(
    model: &TestSuiteModel,
    order_set: &OrderSet,
    level: Level,
) -> Result<Vec<u8>, RewriteError> {
    let arrangement = arrangement(model, order_set, level)?;
    Ok(model.render(&|path, _| {
        arrangement
            .iter()
            .find(|(p, _)| p == path)
            .map(|(_, m)| m.clone())
    }))
}

/// Writes the reordered version of `model` next to its source.
pub fn rewrite(
    model: &TestSuiteModel,
    order_set: &OrderSet,
    level: Level,
    seed: u64,
    source_rel: &str,
) -> Result<ReorderedArtifact, RewriteError> {
    let reorder_index = order_set.reorder_index;
    let body = render_reordered(model, order_set, level)?;
    let (output_path, warning) = name_artifact(&model.file_path, level, reorder_index)?;
    if let Some(w) = warning {
        log::warn!("{w}");
    }
    if output_path.exists() && !file_has_marker(&output_path) {
        return Err(RewriteError::Collision(output_path));
    }
    let marker = marker_line(level, reorder_index, seed, source_rel);
    write_atomic(&output_path, &insert_marker(&body, &marker))?;
    Ok(ReorderedArtifact {
        source_file: model.file_path.clone(),
        reorder_index,
        level,
        output_path,
        order_set: order_set.clone(),
        provenance_marker: marker,
    })
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RewriteError> {
    let io = |source| RewriteError::Io {
        path: path.to_owned(),
        source,
    };
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::Builder::new()
        .prefix(".odre-tmp")
        .tempfile_in(dir)
        .map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanupReport {
    pub removed: Vec<PathBuf>,
    pub kept: Vec<PathBuf>,
    /// Files without a provenance marker; never deleted.
    pub unmarked: Vec<PathBuf>,
    pub failed: Vec<(PathBuf, String)>,
}

/// Deletes generated files unless `keep_artifacts` is set. Only files that
/// still carry the provenance marker are removed.
pub fn cleanup<'a>(
    artifacts: impl IntoIterator<Item = &'a Path>,
    keep_artifacts: bool,
) -> CleanupReport {
    let mut report = CleanupReport::default();
    for path in artifacts {
        if !path.exists() {
            continue;
        }
        if keep_artifacts {
            report.kept.push(path.to_owned());
        } else if !file_has_marker(path) {
            report.unmarked.push(path.to_owned());
        } else {
            match std::fs::remove_file(path) {
                Ok(()) => report.removed.push(path.to_owned()),
                Err(e) => {
                    log::warn!("could not delete {}: {e}", path.display());
                    report.failed.push((path.to_owned(), e.to_string()));
                }
            }
        }
    }
    report
}
