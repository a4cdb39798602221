//! Inverse-accuracy skill sampling.
//!
//! Per-skill weights are `clip(acc^(-T), 0, w_max)`; zero accuracy maps to
//! exactly `w_max`, which caps the divide-by-zero case. Normalized weights
//! give `P(skill)`, and the training subset is drawn in two stages: draw a
//! leaf from `P(skill)`, then draw uniformly an unselected problem
//! attributed to that leaf. An exhausted leaf is removed and the remaining
//! weights renormalize implicitly.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attribution::AttributionRecord;
use crate::corpus::FilteredCorpus;
use crate::error::{Error, Result};
use crate::profiler::SkillProfile;
use crate::taxonomy::{NodeId, SkillTree};

/// Paper-default clipping ceiling for inverse-accuracy weights.
pub const DEFAULT_W_MAX: f64 = 10_000.0;

/// Sampling parameters. `temperature` is the exponent T applied to the
/// inverse accuracy; T=1 is the default, larger values concentrate harder on
/// weak skills.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub temperature: f64,
    pub w_max: f64,
    pub seed: u64,
    pub subset_size: usize,
}

impl SamplerConfig {
    pub fn new(subset_size: usize, seed: u64) -> Self {
        Self {
            temperature: 1.0,
            w_max: DEFAULT_W_MAX,
            seed,
            subset_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(Error::Sampling(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !self.w_max.is_finite() || self.w_max <= 0.0 {
            return Err(Error::Sampling(format!(
                "w_max must be positive, got {}",
                self.w_max
            )));
        }
        Ok(())
    }
}

/// Inverse-accuracy weight with clipping: `min(acc^(-T), w_max)`, and
/// exactly `w_max` at zero accuracy.
pub fn skill_weight(acc: f64, temperature: f64, w_max: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&acc), "accuracy out of range: {acc}");
    if acc == 0.0 {
        return w_max;
    }
    acc.powf(-temperature).min(w_max)
}

/// Normalized sampling distribution over leaves with defined accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillDistribution {
    weights: BTreeMap<NodeId, f64>,
    probabilities: BTreeMap<NodeId, f64>,
    excluded: Vec<NodeId>,
}

impl SkillDistribution {
    pub fn probability(&self, leaf: NodeId) -> f64 {
        self.probabilities.get(&leaf).copied().unwrap_or(0.0)
    }

    pub fn weight(&self, leaf: NodeId) -> f64 {
        self.weights.get(&leaf).copied().unwrap_or(0.0)
    }

    /// Included leaves in id order.
    pub fn leaves(&self) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.probabilities.iter().map(|(&id, &p)| (id, p))
    }

    /// Leaves excluded for undefined accuracy, in id order.
    pub fn excluded(&self) -> &[NodeId] {
        &self.excluded
    }

    /// Draw one leaf from `P(skill)` (with replacement).
    pub fn sample_leaf<R: Rng>(&self, rng: &mut R) -> NodeId {
        let u: f64 = rng.gen::<f64>();
        let mut acc = 0.0;
        let mut last = None;
        for (&id, &p) in &self.probabilities {
            acc += p;
            last = Some(id);
            if u < acc {
                return id;
            }
        }
        last.expect("distribution has at least one leaf")
    }
}

/// Compute `P(skill)` from a profile. Undefined-accuracy leaves are excluded
/// and listed; it is an error for every leaf to be undefined.
pub fn skill_probabilities(
    profile: &SkillProfile,
    config: &SamplerConfig,
) -> Result<SkillDistribution> {
    config.validate()?;
    let mut weights: BTreeMap<NodeId, f64> = BTreeMap::new();
    let mut excluded: Vec<NodeId> = Vec::new();
    for (id, stats) in profile.leaves() {
        match stats.accuracy() {
            Some(acc) => {
                weights.insert(id, skill_weight(acc, config.temperature, config.w_max));
            }
            None => excluded.push(id),
        }
    }
    if weights.is_empty() {
        return Err(Error::Sampling(
            "no leaf has a defined accuracy; nothing to sample from".into(),
        ));
    }
    let total: f64 = weights.values().sum();
    let probabilities: BTreeMap<NodeId, f64> =
        weights.iter().map(|(&id, &w)| (id, w / total)).collect();
    debug_assert!((probabilities.values().sum::<f64>() - 1.0).abs() < 1e-12);
    Ok(SkillDistribution {
        weights,
        probabilities,
        excluded,
    })
}

/// A drawn training subset plus everything needed to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub config: SamplerConfig,
    pub skill_weights: BTreeMap<String, f64>,
    pub skill_probabilities: BTreeMap<String, f64>,
    pub excluded_leaves: Vec<String>,
    pub selected: Vec<String>,
}

fn leaf_pools<'a>(
    corpus: &FilteredCorpus,
    attributions: &'a [AttributionRecord],
    dist: &SkillDistribution,
    tree: &SkillTree,
) -> Result<BTreeMap<NodeId, Vec<&'a str>>> {
    let mut pools: BTreeMap<NodeId, Vec<&str>> =
        dist.leaves().map(|(id, _)| (id, Vec::new())).collect();
    for record in attributions {
        if corpus.get(&record.problem_id).is_none() {
            continue;
        }
        let mut leaves: Vec<NodeId> = record
            .chains
            .iter()
            .map(|c| tree.resolve_chain(c))
            .collect::<Result<_>>()?;
        leaves.sort_unstable();
        leaves.dedup();
        for leaf in leaves {
            if let Some(pool) = pools.get_mut(&leaf) {
                pool.push(record.problem_id.as_str());
            }
        }
    }
    Ok(pools)
}

/// Draw `config.subset_size` distinct problems by the two-stage scheme.
/// Fully deterministic given `config.seed`.
pub fn sample_subset(
    corpus: &FilteredCorpus,
    attributions: &[AttributionRecord],
    dist: &SkillDistribution,
    config: &SamplerConfig,
    tree: &SkillTree,
) -> Result<SamplingPlan> {
    config.validate()?;
    let pools = leaf_pools(corpus, attributions, dist, tree)?;
    let eligible: HashSet<&str> = pools.values().flatten().copied().collect();
    if config.subset_size > eligible.len() {
        return Err(Error::Sampling(format!(
            "subset size {} exceeds the {} problems attributed to sampled-eligible leaves",
            config.subset_size,
            eligible.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut active: BTreeMap<NodeId, f64> =
        dist.leaves().map(|(id, _)| (id, dist.weight(id))).collect();
    let mut selected: Vec<String> = Vec::with_capacity(config.subset_size);
    let mut selected_set: HashSet<&str> = HashSet::new();
    while selected.len() < config.subset_size {
        debug_assert!(
            !active.is_empty(),
            "active set exhausted before subset filled"
        );
        // Stage 1: draw a leaf proportional to the remaining weights.
        let total: f64 = active.values().sum();
        let u: f64 = rng.gen::<f64>() * total;
        let mut cursor = 0.0;
        let mut drawn = *active.keys().next_back().expect("active set is non-empty");
        for (&id, &w) in &active {
            cursor += w;
            if u < cursor {
                drawn = id;
                break;
            }
        }
        // Stage 2: uniform draw over the leaf's unselected problems.
        let available: Vec<&str> = pools[&drawn]
            .iter()
            .copied()
            .filter(|id| !selected_set.contains(id))
            .collect();
        if available.is_empty() {
            // Exhausted leaf: drop it and renormalize (implicit via weights).
            active.remove(&drawn);
            continue;
        }
        let pick = available[rng.gen_range(0..available.len())];
        selected_set.insert(pick);
        selected.push(pick.to_string());
    }
    let named = |id: NodeId| -> Result<String> { Ok(tree.name(id)?.to_string()) };
    let mut skill_weights = BTreeMap::new();
    let mut skill_probabilities = BTreeMap::new();
    for (id, p) in dist.leaves() {
        let name = named(id)?;
        if skill_weights
            .insert(name.clone(), dist.weight(id))
            .is_some()
        {
            return Err(Error::Sampling(format!(
                "two distinct leaves share the name {name:?}; cannot emit a name-keyed plan"
            )));
        }
        skill_probabilities.insert(name, p);
    }
    let excluded_leaves = dist
        .excluded()
        .iter()
        .map(|&id| named(id))
        .collect::<Result<Vec<_>>>()?;
    Ok(SamplingPlan {
        config: config.clone(),
        skill_weights,
        skill_probabilities,
        excluded_leaves,
        selected,
    })
}

/// Analytic single-draw (with replacement) probability that one draw of the
/// two-stage scheme selects `problem_id`: the sum over the problem's
/// attributed leaves of `P(leaf) / |pool(leaf)|`. Used as a diagnostic
/// oracle against empirical frequencies.
pub fn expected_example_marginal(
    problem_id: &str,
    corpus: &FilteredCorpus,
    attributions: &[AttributionRecord],
    dist: &SkillDistribution,
    tree: &SkillTree,
) -> Result<f64> {
    let pools = leaf_pools(corpus, attributions, dist, tree)?;
    let record = attributions
        .iter()
        .find(|r| r.problem_id == problem_id)
        .ok_or_else(|| Error::Sampling(format!("unknown problem {problem_id:?}")))?;
    let mut leaves: Vec<NodeId> = record
        .chains
        .iter()
        .map(|c| tree.resolve_chain(c))
        .collect::<Result<_>>()?;
    leaves.sort_unstable();
    leaves.dedup();
    let mut marginal = 0.0;
    for leaf in leaves {
        let p = dist.probability(leaf);
        if p == 0.0 {
            continue;
        }
        let pool = pools.get(&leaf).map(|v| v.len()).unwrap_or(0);
        if pool > 0 {
            marginal += p / pool as f64;
        }
    }
    Ok(marginal)
}
