//! Scripts, chunking and clustering as learning strategies.

use std::collections::{BTreeMap, BTreeSet};

use crate::nxp_lang::Expr;

use super::{LearningStrategy, Task, TaskRun};

/// Placeholder label for a position past the end of a sequence.
pub const MISSING: &str = "-";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct DeviationKey {
    pub signature: String,
    pub position: usize,
    pub expected: String,
    pub observed: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScriptMemory {
    pub scripts: BTreeMap<String, Vec<String>>,
    pub deviations: BTreeMap<DeviationKey, u32>,
}

impl ScriptMemory {
    pub fn deviation_count(&self, key: &DeviationKey) -> u32 {
        self.deviations.get(key).copied().unwrap_or(0)
    }
}

/// Positional differences between a script and an observed sequence.
pub fn mismatches(signature: &str, script: &[String], observed: &[String]) -> Vec<DeviationKey> {
    let len = script.len().max(observed.len());
    (0..len)
        .filter_map(|i| {
            let expected = script.get(i).map_or(MISSING, String::as_str);
            let seen = observed.get(i).map_or(MISSING, String::as_str);
            (expected != seen).then(|| DeviationKey {
                signature: signature.to_string(),
                position: i,
                expected: expected.to_string(),
                observed: seen.to_string(),
            })
        })
        .collect()
}

/// Scripts keyed by task id; deviations are stored as differences from
/// the script and recognized when they recur.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScriptStrategy;

impl ScriptStrategy {
    fn deviations(run: &TaskRun, mem: &ScriptMemory) -> Option<Vec<DeviationKey>> {
        mem.scripts
            .get(&run.task_id)
            .map(|script| mismatches(&run.task_id, script, &run.labels))
    }
}

impl LearningStrategy for ScriptStrategy {
    type Memory = ScriptMemory;

    fn name(&self) -> &'static str {
        "script"
    }

    fn phi(&self, run: &TaskRun, mem: &ScriptMemory) -> ScriptMemory {
        let mut next = mem.clone();
        match Self::deviations(run, mem) {
            None => {
                next.scripts.insert(run.task_id.clone(), run.labels.clone());
            }
            Some(keys) => {
                for key in keys {
                    *next.deviations.entry(key).or_insert(0) += 1;
                }
            }
        }
        next
    }

    fn expectation(&self, _mem: &ScriptMemory, _task: &Task) -> Vec<Expr> {
        Vec::new()
    }

    fn detect_unexpected(&self, run: &TaskRun, mem: &ScriptMemory, _task: &Task) -> bool {
        match Self::deviations(run, mem) {
            None => true,
            Some(keys) => keys.iter().any(|k| mem.deviation_count(k) == 0),
        }
    }

    /// Recognized deviations are still counted.
    fn consolidate(&self, run: &TaskRun, mem: &ScriptMemory) -> Option<ScriptMemory> {
        match Self::deviations(run, mem) {
            Some(keys) if !keys.is_empty() => Some(self.phi(run, mem)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuleMemory {
    /// Condition feature set to answer; conditions are unique by
    /// construction.
    pub rules: BTreeMap<BTreeSet<String>, bool>,
}

impl RuleMemory {
    /// The most specific rule whose condition is a subset of `features`.
    pub fn matching(&self, features: &BTreeSet<String>) -> Option<(&BTreeSet<String>, bool)> {
        self.rules
            .iter()
            .filter(|(cond, _)| cond.is_subset(features))
            .max_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| b.0.cmp(a.0)))
            .map(|(c, v)| (c, *v))
    }
}

/// Impasse-driven chunking: a task with no matching rule is solved by
/// evaluation and the result is cached under the task's features.
#[derive(Debug, Clone, Copy, Default)]
pub struct ChunkStrategy;

impl LearningStrategy for ChunkStrategy {
    type Memory = RuleMemory;

    fn name(&self) -> &'static str {
        "chunk"
    }

    fn phi(&self, run: &TaskRun, mem: &RuleMemory) -> RuleMemory {
        let mut next = mem.clone();
        next.rules.entry(run.features.clone()).or_insert(run.answer);
        next
    }

    fn expectation(&self, _mem: &RuleMemory, _task: &Task) -> Vec<Expr> {
        Vec::new()
    }

    fn detect_unexpected(&self, _run: &TaskRun, mem: &RuleMemory, task: &Task) -> bool {
        mem.matching(&task.features).is_none()
    }

    fn recall(&self, mem: &RuleMemory, task: &Task) -> Option<bool> {
        mem.matching(&task.features).map(|(_, v)| v)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClusterNode {
    pub members: Vec<BTreeSet<String>>,
    pub centroid: BTreeSet<String>,
}

impl ClusterNode {
    fn founded_by(features: BTreeSet<String>) -> Self {
        ClusterNode {
            centroid: features.clone(),
            members: vec![features],
        }
    }

    /// Member count per feature.
    pub fn frequencies(&self) -> BTreeMap<&str, usize> {
        let mut freq = BTreeMap::new();
        for m in &self.members {
            for f in m {
                *freq.entry(f.as_str()).or_insert(0) += 1;
            }
        }
        freq
    }

    fn recompute(&mut self) {
        let half = self.members.len();
        self.centroid = self
            .frequencies()
            .into_iter()
            .filter(|&(_, n)| 2 * n > half)
            .map(|(f, _)| f.to_string())
            .collect();
    }
}

/// Two-level hierarchy: an implicit root whose children are the leaves.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClusterMemory {
    pub leaves: Vec<ClusterNode>,
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

impl ClusterMemory {
    /// Leaf whose centroid is most similar to `features`; ties go to the
    /// older leaf.
    pub fn nearest(&self, features: &BTreeSet<String>) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, leaf) in self.leaves.iter().enumerate() {
            let s = jaccard(features, &leaf.centroid);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        best
    }

    pub fn insert(&mut self, features: BTreeSet<String>, threshold: f64) -> usize {
        match self.nearest(&features) {
            Some((i, s)) if s >= threshold => {
                self.leaves[i].members.push(features);
                self.leaves[i].recompute();
                i
            }
            _ => {
                self.leaves.push(ClusterNode::founded_by(features));
                self.leaves.len() - 1
            }
        }
    }

    pub fn episode_count(&self) -> usize {
        self.leaves.iter().map(|l| l.members.len()).sum()
    }

    /// Up to `k` centroid features of the nearest leaf, most frequent first.
    pub fn first_look(&self, features: &BTreeSet<String>, k: usize) -> Vec<String> {
        let Some((i, _)) = self.nearest(features) else {
            return Vec::new();
        };
        let leaf = &self.leaves[i];
        let freq = leaf.frequencies();
        let mut signs: Vec<(&str, usize)> = leaf
            .centroid
            .iter()
            .map(|f| (f.as_str(), freq.get(f.as_str()).copied().unwrap_or(0)))
            .collect();
        signs.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        signs
            .into_iter()
            .take(k)
            .map(|(f, _)| f.to_string())
            .collect()
    }
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_FIRST_LOOK_K: usize = 3;

/// Incremental clustering of episode feature sets; the nearest cluster
/// supplies first-look goals for the next task.
#[derive(Debug, Clone, Copy)]
pub struct ClusterStrategy {
    pub threshold: f64,
    pub k: usize,
}

impl Default for ClusterStrategy {
    fn default() -> Self {
        ClusterStrategy {
            threshold: DEFAULT_THRESHOLD,
            k: DEFAULT_FIRST_LOOK_K,
        }
    }
}

impl LearningStrategy for ClusterStrategy {
    type Memory = ClusterMemory;

    fn name(&self) -> &'static str {
        "cluster"
    }

    fn phi(&self, run: &TaskRun, mem: &ClusterMemory) -> ClusterMemory {
        let mut next = mem.clone();
        next.insert(run.episode_features(), self.threshold);
        next
    }

    fn expectation(&self, mem: &ClusterMemory, task: &Task) -> Vec<Expr> {
        mem.first_look(&task.features, self.k)
            .into_iter()
            .map(Expr::atom)
            .collect()
    }

    /// None of the first-look signs turned out true.
    fn detect_unexpected(&self, run: &TaskRun, _mem: &ClusterMemory, _task: &Task) -> bool {
        let expected: BTreeSet<String> = run.expectation.iter().flat_map(Expr::atoms).collect();
        !expected.is_empty() && expected.is_disjoint(&run.true_atoms)
    }

    /// Every episode is clustered, expected or not.
    fn consolidate(&self, run: &TaskRun, mem: &ClusterMemory) -> Option<ClusterMemory> {
        Some(self.phi(run, mem))
    }
}
