//! Turning run records into per-test verdicts and reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Config, EnvironmentReport, Level};
use crate::orchestrate::{Outcome, RunRecord, TestIdentity};
use crate::permute::PermutationPlan;
use crate::rewrite::ReorderedArtifact;

pub const REPORT_JSON: &str = "odre-report.json";
pub const REPORT_MD: &str = "odre-report.md";

/// One rerun's result for one test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub outcome: Outcome,
    /// False when the run itself produced no usable results.
    pub valid: bool,
}

impl Cell {
    pub fn new(outcome: Outcome) -> Self {
        Cell { outcome, valid: true }
    }

    pub fn invalid() -> Self {
        Cell {
            outcome: Outcome::Missing,
            valid: false,
        }
    }
}

/// Per test: reorder index -> one cell per rerun.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct OutcomeMatrix {
    pub rerun_count: u32,
    pub rows: BTreeMap<TestIdentity, BTreeMap<u32, Vec<Cell>>>,
}

impl OutcomeMatrix {
    pub fn cell_count(&self) -> usize {
        self.rows.values().flat_map(|r| r.values()).map(Vec::len).sum()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatrixError {
    #[error("runs disagree on {unit} reorder {reorder} rerun {rerun}: {first} vs {second}")]
    Conflict {
        unit: String,
        reorder: u32,
        rerun: u32,
        first: String,
        second: String,
    },
}

/// Builds the matrix. Missing reruns and tests a run did not report become
/// MISSING; runs that repeat a (unit, order, rerun) must agree.
pub fn build_matrix(records: &[RunRecord]) -> Result<OutcomeMatrix, MatrixError> {
    let rerun_count = records.iter().map(|r| r.run_spec.rerun_index).max().unwrap_or(0);

    // unit -> (reorder, rerun) -> record
    let mut by_slot: BTreeMap<&str, BTreeMap<(u32, u32), &RunRecord>> = BTreeMap::new();
    for r in records {
        let s = &r.run_spec;
        let slot = by_slot.entry(&s.unit_id).or_default();
        match slot.get(&(s.reorder_index, s.rerun_index)) {
            Some(prev) if prev.outcomes != r.outcomes || prev.valid != r.valid => {
                return Err(MatrixError::Conflict {
                    unit: s.unit_id.clone(),
                    reorder: s.reorder_index,
                    rerun: s.rerun_index,
                    first: prev.run_spec.output_path.display().to_string(),
                    second: s.output_path.display().to_string(),
                });
            }
            Some(_) => {}
            None => {
                slot.insert((s.reorder_index, s.rerun_index), r);
            }
        }
    }

    let mut rows = BTreeMap::new();
    for slots in by_slot.values() {
        let orders: BTreeSet<u32> = slots.keys().map(|(o, _)| *o).collect();
        let identities: BTreeSet<&TestIdentity> = slots
            .values()
            .flat_map(|r| r.outcomes.iter().map(|o| &o.identity))
            .collect();
        for id in identities {
            let mut row = BTreeMap::new();
            for &order in &orders {
                let cells = (1..=rerun_count)
                    .map(|rerun| match slots.get(&(order, rerun)) {
                        Some(r) if r.valid => Cell::new(r.outcome_of(id).unwrap_or(Outcome::Missing)),
                        Some(_) => Cell::invalid(),
                        None => Cell::new(Outcome::Missing),
                    })
                    .collect();
                row.insert(order, cells);
            }
            rows.insert(id.clone(), row);
        }
    }
    Ok(OutcomeMatrix { rerun_count, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerdictClass {
    OrderDependentCandidate,
    NondeterministicFlaky,
    StablePass,
    StableFail,
    Inconclusive,
}

impl VerdictClass {
    pub const ALL: [VerdictClass; 5] = [
        VerdictClass::OrderDependentCandidate,
        VerdictClass::NondeterministicFlaky,
        VerdictClass::StablePass,
        VerdictClass::StableFail,
        VerdictClass::Inconclusive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VerdictClass::OrderDependentCandidate => "ORDER_DEPENDENT_CANDIDATE",
            VerdictClass::NondeterministicFlaky => "NONDETERMINISTIC_FLAKY",
            VerdictClass::StablePass => "STABLE_PASS",
            VerdictClass::StableFail => "STABLE_FAIL",
            VerdictClass::Inconclusive => "INCONCLUSIVE",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderEvidence {
    pub pass: u32,
    pub fail: u32,
    pub skip: u32,
    pub todo: u32,
    pub timeout: u32,
    pub missing: u32,
    pub invalid: u32,
}

impl OrderEvidence {
    fn add(&mut self, cell: Cell) {
        if !cell.valid {
            self.invalid += 1;
            return;
        }
        match cell.outcome {
            Outcome::Pass => self.pass += 1,
            Outcome::Fail => self.fail += 1,
            Outcome::Skip => self.skip += 1,
            Outcome::Todo => self.todo += 1,
            Outcome::Timeout => self.timeout += 1,
            Outcome::Missing => self.missing += 1,
        }
    }

    fn fail_like(&self) -> u32 {
        self.fail + self.timeout + self.missing
    }

    /// The order's deterministic result, if it has one.
    fn uniform(&self) -> Option<bool> {
        match (self.pass > 0, self.fail_like() > 0) {
            (true, false) => Some(true),
            (false, true) => Some(false),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub identity: TestIdentity,
    pub class: VerdictClass,
    /// Present exactly for ORDER_DEPENDENT_CANDIDATE: a passing and a
    /// failing order, baseline first when it qualifies.
    pub witness_orders: Option<(u32, u32)>,
    pub evidence: BTreeMap<u32, OrderEvidence>,
}

/// Classifies every test in the matrix. `threshold` is the invalid-cell
/// fraction above which a test is INCONCLUSIVE.
pub fn classify(matrix: &OutcomeMatrix, threshold: f64) -> Vec<Verdict> {
    matrix
        .rows
        .iter()
        .map(|(id, row)| classify_row(id, row, threshold))
        .collect()
}

fn classify_row(id: &TestIdentity, row: &BTreeMap<u32, Vec<Cell>>, threshold: f64) -> Verdict {
    let evidence: BTreeMap<u32, OrderEvidence> = row
        .iter()
        .map(|(&order, cells)| {
            let mut e = OrderEvidence::default();
            cells.iter().for_each(|&c| e.add(c));
            (order, e)
        })
        .collect();
    let total: u32 = row.values().map(|c| c.len() as u32).sum();
    let invalid: u32 = evidence.values().map(|e| e.invalid).sum();

    let verdict = |class, witness_orders| Verdict {
        identity: id.clone(),
        class,
        witness_orders,
        evidence: evidence.clone(),
    };

    if total > 0 && f64::from(invalid) / f64::from(total) > threshold {
        return verdict(VerdictClass::Inconclusive, None);
    }
    if evidence.values().any(|e| e.pass > 0 && e.fail_like() > 0) {
        return verdict(VerdictClass::NondeterministicFlaky, None);
    }
    let uniform: Vec<(u32, bool)> = evidence
        .iter()
        .filter_map(|(&o, e)| e.uniform().map(|u| (o, u)))
        .collect();
    let passing = uniform.iter().find(|(_, p)| *p).map(|(o, _)| *o);
    let failing = uniform.iter().find(|(_, p)| !*p).map(|(o, _)| *o);
    match (passing, failing) {
        (Some(p), Some(f)) => {
            let witness = match uniform.first() {
                Some(&(0, true)) => (0, f),
                Some(&(0, false)) => (0, p),
                _ => (p.min(f), p.max(f)),
            };
            verdict(VerdictClass::OrderDependentCandidate, Some(witness))
        }
        (None, Some(_)) => verdict(VerdictClass::StableFail, None),
        _ => verdict(VerdictClass::StablePass, None),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OdCandidate {
    pub test: String,
    pub file: String,
    pub witness_orders: (u32, u32),
    /// Generated files for the witness orders (baseline is the original).
    pub witness_files: (String, String),
    pub repro: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReportSummary {
    pub tests_analyzed: usize,
    pub counts: BTreeMap<VerdictClass, usize>,
    pub od_candidates: Vec<OdCandidate>,
    pub unreliable: bool,
    /// Where the reports went; `None` when they were printed instead.
    pub json_path: Option<PathBuf>,
    pub markdown_path: Option<PathBuf>,
}

impl ReportSummary {
    pub fn count(&self, class: VerdictClass) -> usize {
        self.counts.get(&class).copied().unwrap_or(0)
    }
}

/// Campaign facts the report repeats.
#[derive(Debug, Clone, Copy)]
pub struct ReportContext<'a> {
    pub campaign_id: &'a str,
    pub out_dir: &'a Path,
    pub environment: Option<&'a EnvironmentReport>,
    pub artifacts: &'a [ReorderedArtifact],
    pub unreliable: bool,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    schema: u32,
    campaign_id: &'a str,
    seed: u64,
    level: Level,
    config: &'a Config,
    environment: Option<&'a EnvironmentReport>,
    unreliable: bool,
    tests_analyzed: usize,
    counts: &'a BTreeMap<VerdictClass, usize>,
    od_candidates: &'a [OdCandidate],
    verdicts: &'a [Verdict],
}

pub fn repro_command(config: &Config, plan: &PermutationPlan) -> String {
    let project = config.project_path.display().to_string();
    let project = if project.contains(char::is_whitespace) {
        format!("'{project}'")
    } else {
        project
    };
    format!(
        "odre --project_path={project} --level={} --seed={} --reorder={} --rerun={} --keep-artifacts",
        plan.level, plan.seed, plan.reorder_count, config.rerun_count
    )
}

fn witness_file(
    id: &TestIdentity,
    order: u32,
    plan: &PermutationPlan,
    config: &Config,
    artifacts: &[ReorderedArtifact],
) -> String {
    if order == 0 {
        return match plan.level {
            Level::Suite => "original file order".into(),
            _ => id.file.clone(),
        };
    }
    match plan.level {
        Level::Suite => format!("file order {order}"),
        _ => artifacts
            .iter()
            .find(|a| a.reorder_index == order && crate::permute::relative_id(&config.project_path, &a.source_file) == id.file)
            .map(|a| crate::permute::relative_id(&config.project_path, &a.output_path))
            .unwrap_or_else(|| format!("reorder {order} of {}", id.file)),
    }
}

fn render_markdown(summary: &ReportSummary, ctx: &ReportContext, plan: &PermutationPlan, config: &Config) -> String {
    let mut md = String::new();
    let _ = writeln!(md, "# odre report\n");
    let _ = writeln!(md, "- campaign: `{}`", ctx.campaign_id);
    let _ = writeln!(md, "- project: `{}`", config.project_path.display());
    let _ = writeln!(md, "- level: {}, seed: {}, reorders: {}, reruns: {}", plan.level, plan.seed, plan.reorder_count, config.rerun_count);
    if let Some(env) = ctx.environment {
        let node = env.node_version.as_ref().map(|v| v.to_string()).unwrap_or_else(|| "unknown".into());
        let _ = writeln!(md, "- jest {}, node {}", env.jest_version, node);
    }
    if summary.unreliable {
        let _ = writeln!(md, "\n**Warning:** more than half of the runs produced no usable results.");
    }
    let _ = writeln!(md, "\n{} tests analyzed.\n", summary.tests_analyzed);
    let _ = writeln!(md, "| class | tests |\n|---|---|");
    for class in VerdictClass::ALL {
        let _ = writeln!(md, "| {} | {} |", class.as_str(), summary.count(class));
    }
    if summary.od_candidates.is_empty() {
        let _ = writeln!(md, "\nNo order-dependent candidates.");
    } else {
        let _ = writeln!(md, "\n## Order-dependent candidates\n");
        let _ = writeln!(md, "| test | file | witness orders | witness files | reproduce |\n|---|---|---|---|---|");
        for c in &summary.od_candidates {
            let _ = writeln!(
                md,
                "| {} | {} | {} / {} | {} / {} | `{}` |",
                c.test.replace('|', "\\|"),
                c.file,
                c.witness_orders.0,
                c.witness_orders.1,
                c.witness_files.0,
                c.witness_files.1,
                c.repro
            );
        }
    }
    md
}

/// Writes `odre-report.json` and `odre-report.md` into `ctx.out_dir`,
/// printing them instead when the directory is not writable.
pub fn emit_report(
    verdicts: &[Verdict],
    plan: &PermutationPlan,
    config: &Config,
    ctx: &ReportContext,
) -> ReportSummary {
    let mut counts: BTreeMap<VerdictClass, usize> = VerdictClass::ALL.iter().map(|&c| (c, 0)).collect();
    for v in verdicts {
        *counts.entry(v.class).or_default() += 1;
    }
    let repro = repro_command(config, plan);
    let od_candidates: Vec<OdCandidate> = verdicts
        .iter()
        .filter_map(|v| {
            let (a, b) = v.witness_orders?;
            Some(OdCandidate {
                test: v.identity.full_name(),
                file: v.identity.file.clone(),
                witness_orders: (a, b),
                witness_files: (
                    witness_file(&v.identity, a, plan, config, ctx.artifacts),
                    witness_file(&v.identity, b, plan, config, ctx.artifacts),
                ),
                repro: repro.clone(),
            })
        })
        .collect();

    let mut summary = ReportSummary {
        tests_analyzed: verdicts.len(),
        counts,
        od_candidates,
        unreliable: ctx.unreliable,
        json_path: None,
        markdown_path: None,
    };
    let json = serde_json::to_string_pretty(&JsonReport {
        schema: 1,
        campaign_id: ctx.campaign_id,
        seed: plan.seed,
        level: plan.level,
        config,
        environment: ctx.environment,
        unreliable: ctx.unreliable,
        tests_analyzed: summary.tests_analyzed,
        counts: &summary.counts,
        od_candidates: &summary.od_candidates,
        verdicts,
    })
    .expect("serializable");
    let md = render_markdown(&summary, ctx, plan, config);

    let json_path = ctx.out_dir.join(REPORT_JSON);
    let md_path = ctx.out_dir.join(REPORT_MD);
    let written = std::fs::create_dir_all(ctx.out_dir)
        .and_then(|_| std::fs::write(&json_path, &json))
        .and_then(|_| std::fs::write(&md_path, &md));
    match written {
        Ok(()) => {
            summary.json_path = Some(json_path);
            summary.markdown_path = Some(md_path);
        }
        Err(e) => {
            log::warn!("cannot write reports to {}: {e}; printing them instead", ctx.out_dir.display());
            println!("{json}\n\n{md}");
        }
    }
    summary
}
