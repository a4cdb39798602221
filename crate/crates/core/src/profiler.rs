//! Per-skill accuracy profiling of a student model.
//!
//! Each profiled example contributes its Avg@k score once to every distinct
//! leaf skill in its attributed chain set. Leaves that never received an
//! example have undefined accuracy and are excluded from sampling weights.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::attribution::AttributionRecord;
use crate::error::{Error, Result};
use crate::taxonomy::{NodeId, SkillTree};

/// Per-sample correctness of one example; `samples.len()` is k.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleResult {
    pub problem_id: String,
    pub samples: Vec<bool>,
}

impl ExampleResult {
    pub fn k(&self) -> usize {
        self.samples.len()
    }
}

/// Fraction of correct samples (Avg@k).
pub fn avg_at_k(samples: &[bool]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Profile("avg_at_k over an empty sample list".into()));
    }
    let correct = samples.iter().filter(|&&s| s).count();
    Ok(correct as f64 / samples.len() as f64)
}

/// Aggregated evidence for one leaf skill.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LeafStats {
    pub n_examples: u64,
    pub score_sum: f64,
}

impl LeafStats {
    /// Mean score, undefined when no example touched the leaf.
    pub fn accuracy(&self) -> Option<f64> {
        (self.n_examples > 0).then(|| self.score_sum / self.n_examples as f64)
    }
}

/// Skill-wise performance profile over every leaf of a tree.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillProfile {
    per_leaf: BTreeMap<NodeId, LeafStats>,
}

impl SkillProfile {
    pub fn stats(&self, leaf: NodeId) -> Option<&LeafStats> {
        self.per_leaf.get(&leaf)
    }

    pub fn accuracy(&self, leaf: NodeId) -> Option<f64> {
        self.per_leaf.get(&leaf).and_then(LeafStats::accuracy)
    }

    /// All leaves in id order.
    pub fn leaves(&self) -> impl Iterator<Item = (NodeId, &LeafStats)> {
        self.per_leaf.iter().map(|(&id, stats)| (id, stats))
    }

    /// Leaves with defined accuracy, in id order.
    pub fn defined(&self) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.per_leaf
            .iter()
            .filter_map(|(&id, stats)| stats.accuracy().map(|a| (id, a)))
    }

    /// Leaves with no profiled example, in id order.
    pub fn undefined(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.per_leaf
            .iter()
            .filter(|(_, stats)| stats.n_examples == 0)
            .map(|(&id, _)| id)
    }

    /// Reassemble a profile from previously reported per-leaf stats (e.g. a
    /// profile artifact read back from disk). Tree leaves missing from
    /// `parts` stay undefined; ids that are not leaves of `tree` are
    /// ignored.
    pub fn from_parts(tree: &SkillTree, parts: Vec<(NodeId, LeafStats)>) -> Self {
        let mut per_leaf: BTreeMap<NodeId, LeafStats> = tree
            .leaves()
            .into_iter()
            .map(|id| (id, LeafStats::default()))
            .collect();
        for (id, stats) in parts {
            if let Some(slot) = per_leaf.get_mut(&id) {
                *slot = stats;
            }
        }
        Self { per_leaf }
    }
}

/// Build the profile from attributions and per-example results.
///
/// Every result's problem_id must have an attribution; orphans are an error.
/// Per-leaf contributions are sorted before summation so the profile is
/// bitwise identical under permutation of either input.
pub fn build_profile(
    tree: &SkillTree,
    attributions: &[AttributionRecord],
    results: &[ExampleResult],
) -> Result<SkillProfile> {
    let mut leaves_of: HashMap<&str, Vec<NodeId>> = HashMap::new();
    for record in attributions {
        let mut leaves = Vec::with_capacity(record.chains.len());
        for chain in &record.chains {
            leaves.push(tree.resolve_chain(chain)?);
        }
        leaves.sort_unstable();
        leaves.dedup();
        leaves_of.insert(record.problem_id.as_str(), leaves);
    }
    let orphans: Vec<&str> = results
        .iter()
        .filter(|r| !leaves_of.contains_key(r.problem_id.as_str()))
        .map(|r| r.problem_id.as_str())
        .collect();
    if !orphans.is_empty() {
        return Err(Error::Profile(format!(
            "results without attributions: {orphans:?}"
        )));
    }
    let mut seen: HashSet<&str> = HashSet::new();
    let mut contributions: BTreeMap<NodeId, Vec<f64>> = tree
        .leaves()
        .into_iter()
        .map(|id| (id, Vec::new()))
        .collect();
    for result in results {
        if !seen.insert(result.problem_id.as_str()) {
            return Err(Error::Profile(format!(
                "duplicate result for problem {:?}",
                result.problem_id
            )));
        }
        let score = avg_at_k(&result.samples)?;
        for leaf in &leaves_of[result.problem_id.as_str()] {
            contributions
                .get_mut(leaf)
                .expect("attribution chains resolve to tree leaves")
                .push(score);
        }
    }
    let per_leaf = contributions
        .into_iter()
        .map(|(id, mut scores)| {
            scores.sort_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
            let stats = LeafStats {
                n_examples: scores.len() as u64,
                score_sum: scores.iter().sum(),
            };
            (id, stats)
        })
        .collect();
    Ok(SkillProfile { per_leaf })
}

/// One row of the profile report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub leaf: String,
    pub n: u64,
    pub accuracy: Option<f64>,
}

/// Report rows sorted ascending by accuracy (undefined last), ties broken by
/// leaf name. This is the data behind a per-skill accuracy curve.
pub fn profile_report(tree: &SkillTree, profile: &SkillProfile) -> Result<Vec<ProfileRow>> {
    let mut rows = Vec::new();
    for (id, stats) in profile.leaves() {
        rows.push(ProfileRow {
            leaf: tree.name(id)?.to_string(),
            n: stats.n_examples,
            accuracy: stats.accuracy(),
        });
    }
    rows.sort_by(|a, b| match (a.accuracy, b.accuracy) {
        (Some(x), Some(y)) => x
            .partial_cmp(&y)
            .expect("accuracies are finite")
            .then_with(|| a.leaf.cmp(&b.leaf)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.leaf.cmp(&b.leaf),
    });
    Ok(rows)
}

/// Serializable profile document keyed by leaf name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedLeafStats {
    pub n: u64,
    pub accuracy: Option<f64>,
}

/// Profile as a `{leaf_name: {n, accuracy}}` document. Errors if two
/// distinct leaves share a display name, which would silently merge rows.
pub fn profile_to_named(
    tree: &SkillTree,
    profile: &SkillProfile,
) -> Result<BTreeMap<String, NamedLeafStats>> {
    let mut out = BTreeMap::new();
    for (id, stats) in profile.leaves() {
        let name = tree.name(id)?.to_string();
        let clash = out.insert(
            name.clone(),
            NamedLeafStats {
                n: stats.n_examples,
                accuracy: stats.accuracy(),
            },
        );
        if clash.is_some() {
            return Err(Error::Profile(format!(
                "two distinct leaves share the name {name:?}; cannot emit a name-keyed profile"
            )));
        }
    }
    Ok(out)
}

/// CSV rendering of the report: `leaf,n,accuracy` with an empty accuracy
/// cell for undefined leaves.
pub fn report_to_csv(rows: &[ProfileRow]) -> String {
    let mut out = String::from("leaf,n,accuracy\n");
    for row in rows {
        let acc = row.accuracy.map(|a| format!("{a}")).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", csv_field(&row.leaf), row.n, acc));
    }
    out
}

/// Quote a CSV field when it contains a comma, quote, or newline.
pub(crate) fn csv_field(raw: &str) -> String {
    if raw.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", raw.replace('"', "\"\""))
    } else {
        raw.to_string()
    }
}
