//! Reproducible order generation.
//!
//! All randomness comes from SplitMix64. A bounded draw in `[0, bound)` uses
//! rejection: with `threshold = (2^64 - bound) mod bound`, draws below the
//! threshold are discarded and the result is `r mod bound`. Fisher–Yates runs
//! from the last index down to 1, swapping `i` with a draw in `[0, i]`.
//!
//! When every permutation fits in the requested count, all of them are
//! returned: the lexicographic list is shuffled with the same stream.
//! Otherwise permutations are sampled by Fisher–Yates, rejecting duplicates.
//! After 1000 consecutive duplicates the sampler switches to drawing a rank
//! and probing upwards for the next unused one.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{Config, Level};
use crate::extract::{NodeKind, TestSuiteModel};

const MAX_CONSECUTIVE_DUPLICATES: usize = 1000;

/// Container id used for the file list at SUITE level.
pub const PROJECT_CONTAINER: &str = "<project>";

#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Unbiased draw in `[0, bound)`; `bound` must be non-zero.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let r = self.next_u64();
            if r >= threshold {
                return r % bound;
            }
        }
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

/// FNV-1a, 64-bit.
pub fn stable_hash(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Seed of a container's stream; independent of every other container.
pub fn container_seed(seed: u64, container_id: &str) -> u64 {
    SplitMix64::new(seed ^ stable_hash(container_id)).next_u64()
}

/// `n!`, or `None` when it does not fit in a `u64`.
pub fn factorial(n: usize) -> Option<u64> {
    (2..=n as u64).try_fold(1u64, |acc, k| acc.checked_mul(k))
}

/// The permutation of rank `rank` in lexicographic order.
pub fn unrank(mut rank: u64, n: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(n);
    for remaining in (1..=n).rev() {
        let block = factorial(remaining - 1).expect("n <= 20");
        let idx = (rank / block) as usize;
        rank %= block;
        out.push(pool.remove(idx));
    }
    out
}

fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    let total = factorial(n).expect("small n") as usize;
    (0..total as u64).map(|r| unrank(r, n)).collect()
}

pub fn is_bijection(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    perm.iter()
        .all(|&i| i < perm.len() && !std::mem::replace(&mut seen[i], true))
}

pub fn is_identity(perm: &[usize]) -> bool {
    perm.iter().enumerate().all(|(i, &p)| i == p)
}

/// Returns `min(count, n_units!)` distinct permutations of `0..n_units`.
pub fn generate_orders(n_units: usize, count: usize, stream_seed: u64) -> Vec<Vec<usize>> {
    let mut rng = SplitMix64::new(stream_seed);
    if n_units <= 1 {
        return vec![(0..n_units).collect()];
    }
    let total = factorial(n_units);
    if let Some(total) = total.filter(|&t| t <= count as u64) {
        let mut all = all_permutations(n_units);
        debug_assert_eq!(all.len() as u64, total);
        rng.shuffle(&mut all);
        return all;
    }

    let mut seen: HashSet<Vec<usize>> = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    let mut misses = 0;
    while out.len() < count {
        match total {
            Some(total) if misses >= MAX_CONSECUTIVE_DUPLICATES => {
                let mut rank = rng.below(total);
                loop {
                    let p = unrank(rank, n_units);
                    if seen.insert(p.clone()) {
                        out.push(p);
                        break;
                    }
                    rank = (rank + 1) % total;
                }
            }
            _ => {
                let mut p: Vec<usize> = (0..n_units).collect();
                rng.shuffle(&mut p);
                if seen.insert(p.clone()) {
                    out.push(p);
                    misses = 0;
                } else {
                    misses += 1;
                }
            }
        }
    }
    out
}

/// One container's permutation: position `i` receives original unit
/// `permutation[i]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Order {
    pub container_id: String,
    pub permutation: Vec<usize>,
}

/// Orders for every reorderable container of one unit, at one reorder index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderSet {
    pub reorder_index: u32,
    pub orders: Vec<Order>,
}

impl OrderSet {
    pub fn is_identity(&self) -> bool {
        self.orders.iter().all(|o| is_identity(&o.permutation))
    }

    pub fn order_for(&self, container_id: &str) -> Option<&Order> {
        self.orders.iter().find(|o| o.container_id == container_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainerInfo {
    pub id: String,
    /// Position indices of the enclosing describes (empty at SUITE level and
    /// for a file's top level).
    pub path: Vec<usize>,
    pub n_units: usize,
    /// `n_units! <= reorder_count`, so every order is generated.
    pub exhaustive: bool,
}

/// Everything reordered together: one file (TEST/DESCRIBE) or the project
/// (SUITE).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitPlan {
    pub unit_id: String,
    pub source_file: Option<PathBuf>,
    pub containers: Vec<ContainerInfo>,
    pub order_sets: Vec<OrderSet>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationPlan {
    pub level: Level,
    pub seed: u64,
    pub reorder_count: u32,
    pub units: Vec<UnitPlan>,
    /// Whether any generated order set equals the original order.
    pub includes_identity: bool,
    pub diagnostics: Vec<String>,
}

impl PermutationPlan {
    pub fn unit(&self, unit_id: &str) -> Option<&UnitPlan> {
        self.units.iter().find(|u| u.unit_id == unit_id)
    }
}

/// Input for [`build_plan`].
pub enum PlanInput<'a> {
    /// Parsed files, for TEST and DESCRIBE levels.
    Models(&'a [TestSuiteModel]),
    /// The discovered file list, for SUITE level.
    Files(&'a [PathBuf]),
}

/// Path of `file` relative to `root` with `/` separators.
pub fn relative_id(root: &Path, file: &Path) -> String {
    let rel = file.strip_prefix(root).unwrap_or(file);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

pub fn container_id(unit_id: &str, path: &[usize]) -> String {
    let path: Vec<String> = path.iter().map(usize::to_string).collect();
    format!("{unit_id}#{}", path.join("/"))
}

/// Containers of one file at a level, as (describe path, unit count).
pub fn file_containers(model: &TestSuiteModel, level: Level, nested: bool) -> Vec<(Vec<usize>, usize)> {
    model
        .containers()
        .into_iter()
        .filter_map(|c| match level {
            Level::Test => Some((c.path.clone(), c.units(NodeKind::Test).len())),
            Level::Describe if c.path.is_empty() || nested => {
                Some((c.path.clone(), c.units(NodeKind::Describe).len()))
            }
            _ => None,
        })
        .collect()
}

pub fn build_plan(input: PlanInput<'_>, config: &Config) -> PermutationPlan {
    let level = config.level;
    let count = config.reorder_count as usize;
    let mut diagnostics = Vec::new();
    let mut units = Vec::new();

    match input {
        PlanInput::Files(files) => {
            let unit = plan_unit(
                PROJECT_CONTAINER.to_string(),
                None,
                vec![(PROJECT_CONTAINER.to_string(), Vec::new(), files.len())],
                count,
                config.seed,
                &mut diagnostics,
            );
            units.push(unit);
        }
        PlanInput::Models(models) => {
            for model in models {
                let unit_id = relative_id(&config.project_path, &model.file_path);
                let containers = file_containers(model, level, config.nested_describes)
                    .into_iter()
                    .map(|(path, n)| (container_id(&unit_id, &path), path, n))
                    .collect();
                units.push(plan_unit(
                    unit_id,
                    Some(model.file_path.clone()),
                    containers,
                    count,
                    config.seed,
                    &mut diagnostics,
                ));
            }
        }
    }

    let includes_identity = units
        .iter()
        .flat_map(|u| &u.order_sets)
        .any(OrderSet::is_identity);
    PermutationPlan {
        level,
        seed: config.seed,
        reorder_count: config.reorder_count,
        units,
        includes_identity,
        diagnostics,
    }
}

fn plan_unit(
    unit_id: String,
    source_file: Option<PathBuf>,
    containers: Vec<(String, Vec<usize>, usize)>,
    count: usize,
    seed: u64,
    diagnostics: &mut Vec<String>,
) -> UnitPlan {
    let mut infos = Vec::new();
    let mut lists = Vec::new();
    for (id, path, n) in containers {
        if n < 2 {
            diagnostics.push(format!(
                "{id}: {n} reorderable unit(s); kept in original order"
            ));
            continue;
        }
        let orders = generate_orders(n, count, container_seed(seed, &id));
        infos.push(ContainerInfo {
            exhaustive: factorial(n).is_some_and(|t| t <= count as u64),
            id,
            path,
            n_units: n,
        });
        lists.push(orders);
    }
    if lists.is_empty() {
        diagnostics.push(format!("{unit_id}: nothing to reorder; baseline only"));
    }

    let order_sets = combine(&lists, count)
        .into_iter()
        .enumerate()
        .map(|(k, tuple)| OrderSet {
            reorder_index: k as u32 + 1,
            orders: infos
                .iter()
                .zip(&lists)
                .zip(&tuple)
                .map(|((info, list), &i)| Order {
                    container_id: info.id.clone(),
                    permutation: list[i].clone(),
                })
                .collect(),
        })
        .collect();

    UnitPlan {
        unit_id,
        source_file,
        containers: infos,
        order_sets,
    }
}

/// Picks `min(count, product of list lengths)` distinct index tuples. Tuple
/// `k` is `k mod len` per list, which covers every list entry within the
/// first `max(len)` tuples; a repeated tuple is replaced by the next unused
/// one in mixed-radix order.
fn combine(lists: &[Vec<Vec<usize>>], count: usize) -> Vec<Vec<usize>> {
    if lists.is_empty() {
        return Vec::new();
    }
    let radices: Vec<usize> = lists.iter().map(Vec::len).collect();
    let product = radices
        .iter()
        .try_fold(1usize, |acc, &r| acc.checked_mul(r))
        .unwrap_or(usize::MAX);
    let target = count.min(product);

    let decode = |mut r: usize| -> Vec<usize> {
        radices
            .iter()
            .map(|&m| {
                let d = r % m;
                r /= m;
                d
            })
            .collect()
    };

    let mut used = HashSet::with_capacity(target);
    let mut out = Vec::with_capacity(target);
    let mut cursor = 0usize;
    for k in 0..target {
        let mut tuple: Vec<usize> = radices.iter().map(|&m| k % m).collect();
        if used.contains(&tuple) {
            loop {
                tuple = decode(cursor);
                cursor += 1;
                if !used.contains(&tuple) {
                    break;
                }
            }
        }
        used.insert(tuple.clone());
        out.push(tuple);
    }
    out
}
