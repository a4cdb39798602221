//! Synthetic input builders shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use skill_loom_core::attribution::{AttributionRecord, PROMPT_VERSION};
use skill_loom_core::corpus::{FilteredCorpus, ProblemRecord, TeacherResponse};
use skill_loom_core::profiler::ExampleResult;
use skill_loom_core::taxonomy::{SkillChain, SkillTree};

/// Flat tree with `n` leaves under one root.
pub fn flat_tree(n: usize) -> SkillTree {
    let children: Vec<serde_json::Value> = (0..n)
        .map(|i| serde_json::json!({"name": format!("skill {i:05}")}))
        .collect();
    SkillTree::from_json(&serde_json::json!({"name": "root", "children": children}).to_string())
        .expect("valid tree")
}

/// Synthetic corpus, attributions (1-2 leaves per problem), and k=4 results.
pub fn synthetic_pipeline_inputs(
    n_problems: usize,
    n_leaves: usize,
    seed: u64,
) -> (FilteredCorpus, Vec<AttributionRecord>, Vec<ExampleResult>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n_problems);
    let mut attrs = Vec::with_capacity(n_problems);
    let mut results = Vec::with_capacity(n_problems);
    for i in 0..n_problems {
        let id = format!("p{i:06}");
        records.push(ProblemRecord {
            problem_id: id.clone(),
            question: format!("question {i}"),
            ground_truth: Some("1".into()),
            responses: vec![TeacherResponse {
                generator: "teacher".into(),
                solution: "solution".into(),
                predicted_answer: "1".into(),
            }],
        });
        let mut leaves = vec![rng.gen_range(0..n_leaves)];
        if rng.gen_bool(0.3) {
            leaves.push(rng.gen_range(0..n_leaves));
        }
        leaves.sort_unstable();
        leaves.dedup();
        attrs.push(AttributionRecord {
            problem_id: id.clone(),
            chains: leaves
                .iter()
                .map(|&l| SkillChain::new(vec!["root".into(), format!("skill {l:05}")]))
                .collect(),
            model: "bench".into(),
            prompt_version: PROMPT_VERSION.into(),
            fallback: false,
        });
        let samples: Vec<bool> = (0..4).map(|_| rng.gen_bool(0.6)).collect();
        results.push(ExampleResult {
            problem_id: id,
            samples,
        });
    }
    let corpus = FilteredCorpus::from_records(records).expect("valid corpus");
    (corpus, attrs, results)
}

/// A long completion ending in a boxed answer, roughly `kb` kilobytes.
pub fn long_completion(kb: usize) -> String {
    let mut text = String::with_capacity(kb * 1024 + 64);
    while text.len() < kb * 1024 {
        text.push_str(
            "We expand the recurrence and regroup terms, checking the base cases as we go. ",
        );
    }
    text.push_str("Therefore the final value is \\boxed{\\frac{355}{113}}.");
    text
}
