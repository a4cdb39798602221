//! Skill-chain augmentation of SFT records.
//!
//! The full-chain variant prepends the literal prefix
//! `Skills: [Mathematics → Probability → Bayes' theorem]` (one bracketed
//! chain per attributed path, comma-separated, in tree preorder of their
//! leaves), followed by one blank line and the retained solution. The
//! one-layer ablation variants expose only chain roots or only leaves.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attribution::AttributionRecord;
use crate::chat::{ChatMessage, Role};
use crate::corpus::FilteredCorpus;
use crate::error::{Error, Result};
use crate::sampler::SamplingPlan;
use crate::taxonomy::{SkillChain, SkillTree};

/// Literal token opening every skill prefix.
pub const SKILL_PREFIX: &str = "Skills: ";
/// Separator between chain steps.
pub const CHAIN_ARROW: &str = " → ";
/// Separator between the prefix block and the solution.
pub const PREFIX_SEPARATOR: &str = "\n\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentVariant {
    FullChain,
    RootOnly,
    LeafOnly,
    None,
}

impl AugmentVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::FullChain => "full_chain",
            Self::RootOnly => "root_only",
            Self::LeafOnly => "leaf_only",
            Self::None => "none",
        }
    }
}

impl FromStr for AugmentVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full_chain" => Ok(Self::FullChain),
            "root_only" => Ok(Self::RootOnly),
            "leaf_only" => Ok(Self::LeafOnly),
            "none" => Ok(Self::None),
            other => Err(Error::Augment(format!(
                "unknown variant {other:?}; expected full_chain, root_only, leaf_only, or none"
            ))),
        }
    }
}

/// One SFT-ready record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftRecord {
    pub problem_id: String,
    pub prompt: String,
    pub response: String,
    pub variant: AugmentVariant,
}

/// Wire shape of one SFT output line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SftLine {
    pub problem_id: String,
    pub messages: Vec<ChatMessage>,
    pub variant: AugmentVariant,
}

impl From<&SftRecord> for SftLine {
    fn from(record: &SftRecord) -> Self {
        Self {
            problem_id: record.problem_id.clone(),
            messages: vec![
                ChatMessage {
                    role: Role::User,
                    content: record.prompt.clone(),
                },
                ChatMessage {
                    role: Role::Assistant,
                    content: record.response.clone(),
                },
            ],
            variant: record.variant,
        }
    }
}

/// Render the skill prefix for a chain set. Chains are ordered by the tree
/// preorder of their leaves; the root/leaf variants deduplicate repeated
/// names while preserving that order. Variant `none` renders nothing.
pub fn format_skill_prefix(
    tree: &SkillTree,
    chains: &[SkillChain],
    variant: AugmentVariant,
) -> Result<String> {
    if variant == AugmentVariant::None {
        return Ok(String::new());
    }
    if chains.is_empty() {
        return Err(Error::Augment(
            "cannot render a skill prefix for an empty chain set".into(),
        ));
    }
    let mut ordered: Vec<(crate::taxonomy::NodeId, &SkillChain)> = chains
        .iter()
        .map(|c| Ok((tree.resolve_chain(c)?, c)))
        .collect::<Result<_>>()?;
    ordered.sort_by_key(|(leaf, _)| *leaf);
    let mut parts: Vec<String> = Vec::new();
    let mut seen: Vec<&str> = Vec::new();
    for (_, chain) in &ordered {
        match variant {
            AugmentVariant::FullChain => {
                parts.push(format!("[{}]", chain.path.join(CHAIN_ARROW)));
            }
            AugmentVariant::RootOnly => {
                let root = chain.root_name();
                if !seen.contains(&root) {
                    seen.push(root);
                    parts.push(format!("[{root}]"));
                }
            }
            AugmentVariant::LeafOnly => {
                let leaf = chain.leaf_name();
                if !seen.contains(&leaf) {
                    seen.push(leaf);
                    parts.push(format!("[{leaf}]"));
                }
            }
            AugmentVariant::None => unreachable!(),
        }
    }
    Ok(format!("{SKILL_PREFIX}{}", parts.join(", ")))
}

/// Recover the bare solution from an augmented response by stripping the
/// prefix block up to the first blank line. Responses of variant `none`
/// pass through unchanged.
pub fn strip_skill_prefix(response: &str) -> &str {
    match response.split_once(PREFIX_SEPARATOR) {
        Some((first, rest)) if first.starts_with(SKILL_PREFIX) => rest,
        _ => response,
    }
}

/// Emit one SFT record per selected problem, in plan order.
pub fn emit_sft_records(
    plan: &SamplingPlan,
    corpus: &FilteredCorpus,
    attributions: &[AttributionRecord],
    variant: AugmentVariant,
    tree: &SkillTree,
) -> Result<Vec<SftRecord>> {
    let chains_of: std::collections::HashMap<&str, &[SkillChain]> = attributions
        .iter()
        .map(|r| (r.problem_id.as_str(), r.chains.as_slice()))
        .collect();
    let orphans: Vec<&str> = plan
        .selected
        .iter()
        .filter(|id| corpus.get(id).is_none() || !chains_of.contains_key(id.as_str()))
        .map(String::as_str)
        .collect();
    if !orphans.is_empty() {
        return Err(Error::Augment(format!(
            "selected ids missing from the corpus or attributions: {orphans:?}"
        )));
    }
    let mut records = Vec::with_capacity(plan.selected.len());
    for id in &plan.selected {
        let problem = corpus.get(id).expect("orphans checked above");
        let solution = &problem.retained_response()?.solution;
        let response = match variant {
            AugmentVariant::None => solution.clone(),
            _ => {
                let prefix = format_skill_prefix(tree, chains_of[id.as_str()], variant)?;
                format!("{prefix}{PREFIX_SEPARATOR}{solution}")
            }
        };
        records.push(SftRecord {
            problem_id: id.clone(),
            prompt: problem.question.clone(),
            response,
            variant,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::PROMPT_VERSION;
    use crate::corpus::{filter_corpus, ProblemRecord, TeacherResponse};
    use crate::sampler::SamplerConfig;

    fn paper_tree() -> SkillTree {
        SkillTree::from_json(
            r#"{"name":"Mathematics","children":[{"name":"Probability","children":[{"name":"Bayes' theorem"},{"name":"Counting"}]},{"name":"Algebra","children":[{"name":"Factoring"}]}]}"#,
        )
        .unwrap()
    }

    fn chain(path: &[&str]) -> SkillChain {
        SkillChain::new(path.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn full_chain_matches_golden_string() {
        let tree = paper_tree();
        let chains = vec![chain(&["Mathematics", "Probability", "Bayes' theorem"])];
        let prefix = format_skill_prefix(&tree, &chains, AugmentVariant::FullChain).unwrap();
        assert_eq!(
            prefix,
            "Skills: [Mathematics → Probability → Bayes' theorem]"
        );
    }

    #[test]
    fn leaf_only_takes_last_element() {
        let tree = paper_tree();
        let chains = vec![chain(&["Mathematics", "Probability", "Bayes' theorem"])];
        let prefix = format_skill_prefix(&tree, &chains, AugmentVariant::LeafOnly).unwrap();
        assert_eq!(prefix, "Skills: [Bayes' theorem]");
    }

    #[test]
    fn root_only_dedups_shared_roots() {
        let tree = paper_tree();
        let chains = vec![
            chain(&["Mathematics", "Probability", "Bayes' theorem"]),
            chain(&["Mathematics", "Algebra", "Factoring"]),
        ];
        let prefix = format_skill_prefix(&tree, &chains, AugmentVariant::RootOnly).unwrap();
        assert_eq!(prefix, "Skills: [Mathematics]");
    }

    #[test]
    fn multiple_chains_join_in_preorder() {
        let tree = paper_tree();
        // Given out of order; preorder puts Bayes' theorem before Factoring.
        let chains = vec![
            chain(&["Mathematics", "Algebra", "Factoring"]),
            chain(&["Mathematics", "Probability", "Bayes' theorem"]),
        ];
        let prefix = format_skill_prefix(&tree, &chains, AugmentVariant::FullChain).unwrap();
        assert_eq!(
            prefix,
            "Skills: [Mathematics → Probability → Bayes' theorem], [Mathematics → Algebra → Factoring]"
        );
    }

    #[test]
    fn empty_chains_error_unless_none() {
        let tree = paper_tree();
        assert!(format_skill_prefix(&tree, &[], AugmentVariant::FullChain).is_err());
        assert_eq!(
            format_skill_prefix(&tree, &[], AugmentVariant::None).unwrap(),
            ""
        );
    }

    #[test]
    fn variant_parses_from_str() {
        assert_eq!(
            "full_chain".parse::<AugmentVariant>().unwrap(),
            AugmentVariant::FullChain
        );
        assert!("fancy".parse::<AugmentVariant>().is_err());
    }

    fn fixture() -> (
        SkillTree,
        FilteredCorpus,
        Vec<AttributionRecord>,
        SamplingPlan,
    ) {
        let tree = paper_tree();
        let records: Vec<ProblemRecord> = [("p1", "What is P(A|B)?"), ("p2", "Factor x^2-1.")]
            .iter()
            .map(|(id, q)| ProblemRecord {
                problem_id: id.to_string(),
                question: q.to_string(),
                ground_truth: Some("1".to_string()),
                responses: vec![TeacherResponse {
                    generator: "teacher".to_string(),
                    solution: format!("Solution for {id}.\n\nDetails follow."),
                    predicted_answer: "1".to_string(),
                }],
            })
            .collect();
        let corpus = filter_corpus(&records, "teacher", |a, b| a == b).unwrap();
        let attrs = vec![
            AttributionRecord {
                problem_id: "p1".into(),
                chains: vec![chain(&["Mathematics", "Probability", "Bayes' theorem"])],
                model: "m".into(),
                prompt_version: PROMPT_VERSION.into(),
                fallback: false,
            },
            AttributionRecord {
                problem_id: "p2".into(),
                chains: vec![chain(&["Mathematics", "Algebra", "Factoring"])],
                model: "m".into(),
                prompt_version: PROMPT_VERSION.into(),
                fallback: false,
            },
        ];
        let plan = SamplingPlan {
            config: SamplerConfig::new(2, 0),
            skill_weights: Default::default(),
            skill_probabilities: Default::default(),
            excluded_leaves: vec![],
            selected: vec!["p2".into(), "p1".into()],
        };
        (tree, corpus, attrs, plan)
    }

    #[test]
    fn emit_follows_plan_order_and_prefixes() {
        let (tree, corpus, attrs, plan) = fixture();
        let records =
            emit_sft_records(&plan, &corpus, &attrs, AugmentVariant::FullChain, &tree).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].problem_id, "p2");
        assert!(records[0].response.starts_with("Skills: ["));
        assert_eq!(records[1].problem_id, "p1");
    }

    #[test]
    fn emit_variant_none_is_bare_solution() {
        let (tree, corpus, attrs, plan) = fixture();
        let records =
            emit_sft_records(&plan, &corpus, &attrs, AugmentVariant::None, &tree).unwrap();
        for record in &records {
            let solution = &corpus
                .get(&record.problem_id)
                .unwrap()
                .retained_response()
                .unwrap()
                .solution;
            assert_eq!(&record.response, solution);
        }
    }

    #[test]
    fn emit_is_deterministic() {
        let (tree, corpus, attrs, plan) = fixture();
        let a = emit_sft_records(&plan, &corpus, &attrs, AugmentVariant::FullChain, &tree).unwrap();
        let b = emit_sft_records(&plan, &corpus, &attrs, AugmentVariant::FullChain, &tree).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn emit_missing_id_lists_orphans() {
        let (tree, corpus, attrs, mut plan) = fixture();
        plan.selected.push("ghost".into());
        let err =
            emit_sft_records(&plan, &corpus, &attrs, AugmentVariant::FullChain, &tree).unwrap_err();
        assert!(err.to_string().contains("ghost"));
    }

    #[test]
    fn strip_recovers_solution_byte_exactly() {
        let (tree, corpus, attrs, plan) = fixture();
        let records =
            emit_sft_records(&plan, &corpus, &attrs, AugmentVariant::FullChain, &tree).unwrap();
        for record in &records {
            let solution = &corpus
                .get(&record.problem_id)
                .unwrap()
                .retained_response()
                .unwrap()
                .solution;
            assert_eq!(strip_skill_prefix(&record.response), solution);
        }
    }

    #[test]
    fn leaf_and_root_sets_match_chain_endpoints() {
        let tree = paper_tree();
        let chains = vec![
            chain(&["Mathematics", "Probability", "Bayes' theorem"]),
            chain(&["Mathematics", "Probability", "Counting"]),
            chain(&["Mathematics", "Algebra", "Factoring"]),
        ];
        let leaf = format_skill_prefix(&tree, &chains, AugmentVariant::LeafOnly).unwrap();
        assert_eq!(leaf, "Skills: [Bayes' theorem], [Counting], [Factoring]");
        let root = format_skill_prefix(&tree, &chains, AugmentVariant::RootOnly).unwrap();
        assert_eq!(root, "Skills: [Mathematics]");
    }
}
