//! Top-down skill attribution.
//!
//! Each problem starts at the tree root. The labeler is asked which of the
//! current node's children are involved; every selected internal child is
//! visited in turn at the next level, and every selected leaf contributes
//! its root-to-leaf chain. Leaves are never prompted, so the number of
//! requests per problem equals the number of internal nodes actually
//! visited.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::chat::{ChatClient, ChatMessage, ChatRequest};
use crate::corpus::{FilteredCorpus, ProblemRecord};
use crate::error::{Error, Result};
use crate::taxonomy::{NodeId, SkillChain, SkillTree};

/// Version tag recorded on every attribution record; bump when the prompt
/// template changes.
pub const PROMPT_VERSION: &str = "v1";

/// Suffix appended to a re-issued prompt after an unparseable or empty
/// reply. Changing the prompt gives the retry its own cache key, so a bad
/// cached reply can never freeze the traversal.
pub const RETRY_SUFFIX: &str =
    "\n\nYour previous answer was unparseable. Answer as a Python list of strings.";

/// Skill chains attributed to one problem. `fallback` marks records whose
/// root selection stayed empty through all retries and was mapped to the
/// lexicographically first leaf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub problem_id: String,
    pub chains: Vec<SkillChain>,
    pub model: String,
    pub prompt_version: String,
    pub fallback: bool,
}

/// One per-problem failure in a batch run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributionFailure {
    pub problem_id: String,
    pub stage: String,
    pub reason: String,
}

/// Batch output: records in corpus order plus the failures report.
#[derive(Debug)]
pub struct AttributionOutcome {
    pub records: Vec<AttributionRecord>,
    pub failures: Vec<AttributionFailure>,
}

impl AttributionOutcome {
    /// Error when the failure fraction exceeds `threshold` (strictly).
    pub fn check_failure_rate(&self, threshold: f64) -> Result<()> {
        let total = self.records.len() + self.failures.len();
        if total == 0 {
            return Ok(());
        }
        let rate = self.failures.len() as f64 / total as f64;
        if rate > threshold {
            return Err(Error::Attribution(format!(
                "{} of {} problems failed attribution ({:.2}%), above the {:.2}% limit",
                self.failures.len(),
                total,
                rate * 100.0,
                threshold * 100.0
            )));
        }
        Ok(())
    }
}

/// Decoding and retry settings for the labeling model.
#[derive(Debug, Clone)]
pub struct AttributeOptions {
    pub model: String,
    /// Defaults to 0 for label stability.
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    /// Re-asks after a parse failure (any level) or an empty selection at
    /// the root.
    pub parse_retries: u32,
    pub max_in_flight: usize,
    /// Emit a progress event every this many problems.
    pub progress_every: usize,
    /// Batch runs abort when the per-problem failure fraction exceeds this.
    pub failure_threshold: f64,
}

impl Default for AttributeOptions {
    fn default() -> Self {
        Self {
            model: "labeler".to_string(),
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 512,
            parse_retries: 2,
            max_in_flight: 4,
            progress_every: 100,
            failure_threshold: 0.01,
        }
    }
}

/// The question plus its retained solution, as shown to the labeler.
pub fn qa_input(problem: &ProblemRecord) -> String {
    match problem.responses.first() {
        Some(response) => format!("{}\n\n{}", problem.question, response.solution),
        None => problem.question.clone(),
    }
}

/// Render the labeling prompt for one node's children.
pub fn build_prompt(problem: &ProblemRecord, child_names: &[&str]) -> Vec<ChatMessage> {
    let bullets: Vec<String> = child_names.iter().map(|n| format!("- {n}")).collect();
    let content = format!(
        "Given the following Math problem:\n\n\
         Q&A: {qa}\n\n\
         Which of the following skills are involved to understanding or solving the problem? \
         Even the most basic skills such as simple addition and subtraction must be taken into account. \
         You can select multiple options if needed. Just return a list of skill names.\n\n\
         Skills:\n{skills}\n\n\
         Answer as a Python list of strings.",
        qa = qa_input(problem),
        skills = bullets.join("\n"),
    );
    vec![ChatMessage::user(content)]
}

/// Extract the first bracketed list of quoted strings from a reply, then
/// filter to `allowed`, preserving allowed-list order. Unknown names are
/// dropped. A reply with no parseable list is a [`Error::SelectionParse`].
pub fn parse_skill_selection(reply: &str, allowed: &[&str]) -> Result<Vec<String>> {
    let parsed = first_quoted_list(reply).ok_or_else(|| {
        let head: String = reply.chars().take(120).collect();
        Error::SelectionParse(format!("no bracketed list of quoted strings in {head:?}"))
    })?;
    Ok(allowed
        .iter()
        .filter(|name| parsed.iter().any(|p| p == *name))
        .map(|name| name.to_string())
        .collect())
}

/// Scan for the first `[...]` that parses as a (possibly empty) list of
/// quoted strings. Tolerates single or double quotes and backslash escapes.
fn first_quoted_list(reply: &str) -> Option<Vec<String>> {
    let bytes: Vec<char> = reply.chars().collect();
    for (start, &c) in bytes.iter().enumerate() {
        if c != '[' {
            continue;
        }
        if let Some(items) = parse_quoted_list(&bytes[start + 1..]) {
            return Some(items);
        }
    }
    None
}

fn parse_quoted_list(chars: &[char]) -> Option<Vec<String>> {
    let mut items = Vec::new();
    let mut i = 0usize;
    loop {
        while i < chars.len() && chars[i].is_whitespace() {
            i += 1;
        }
        match chars.get(i)? {
            ']' => return Some(items),
            quote @ ('"' | '\'') => {
                let quote = *quote;
                i += 1;
                let mut value = String::new();
                loop {
                    match chars.get(i)? {
                        '\\' => {
                            value.push(*chars.get(i + 1)?);
                            i += 2;
                        }
                        c if *c == quote => {
                            i += 1;
                            break;
                        }
                        c => {
                            value.push(*c);
                            i += 1;
                        }
                    }
                }
                items.push(value);
                while i < chars.len() && chars[i].is_whitespace() {
                    i += 1;
                }
                match chars.get(i)? {
                    ',' => i += 1,
                    ']' => return Some(items),
                    _ => return None,
                }
            }
            _ => return None,
        }
    }
}

fn selection_request(
    problem: &ProblemRecord,
    child_names: &[&str],
    opts: &AttributeOptions,
    retry: u32,
) -> ChatRequest {
    let mut messages = build_prompt(problem, child_names);
    if retry > 0 {
        let content = &mut messages.last_mut().expect("prompt has a message").content;
        for _ in 0..retry {
            content.push_str(RETRY_SUFFIX);
        }
    }
    ChatRequest {
        model: opts.model.clone(),
        messages,
        temperature: opts.temperature,
        top_p: opts.top_p,
        max_tokens: opts.max_tokens,
        sample_index: 0,
    }
}

/// Ask for one node's selection, retrying parse failures (and, at the root,
/// empty selections).
fn ask_selection(
    problem: &ProblemRecord,
    child_names: &[&str],
    client: &ChatClient,
    opts: &AttributeOptions,
    is_root: bool,
) -> Result<Vec<String>> {
    let mut last_err: Option<Error> = None;
    for retry in 0..=opts.parse_retries {
        let req = selection_request(problem, child_names, opts, retry);
        let response = client.complete(&req)?;
        match parse_skill_selection(&response.content, child_names) {
            Ok(selection) if selection.is_empty() && is_root => {
                last_err = Some(Error::SelectionParse("empty selection at the root".into()));
            }
            Ok(selection) => return Ok(selection),
            Err(e @ Error::SelectionParse(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one attempt ran"))
}

/// Attribute one filtered problem to its set of skill chains.
pub fn attribute(
    problem: &ProblemRecord,
    tree: &SkillTree,
    client: &ChatClient,
    opts: &AttributeOptions,
) -> Result<AttributionRecord> {
    let root = tree.root();
    let mut leaves: Vec<NodeId> = Vec::new();
    let mut fallback = false;
    if tree.is_leaf(root)? {
        leaves.push(root);
    } else {
        let mut frontier: VecDeque<NodeId> = VecDeque::from([root]);
        while let Some(node) = frontier.pop_front() {
            let children = tree.children_of(node)?;
            let child_names: Vec<&str> = children.iter().map(|(_, n)| *n).collect();
            let is_root = node == root;
            let selection = match ask_selection(problem, &child_names, client, opts, is_root) {
                Ok(sel) => sel,
                Err(Error::SelectionParse(reason)) if is_root => {
                    // Every problem must map to at least one skill; fall back
                    // to the lexicographically first leaf and flag the record.
                    tracing::warn!(
                        problem_id = %problem.problem_id,
                        "root selection unusable ({reason}); falling back to first leaf"
                    );
                    fallback = true;
                    leaves.push(tree.first_leaf_by_name());
                    break;
                }
                Err(Error::SelectionParse(reason)) => {
                    // An empty selection abandons a branch, but a reply that
                    // never parses is a real failure.
                    return Err(Error::Attribution(format!(
                        "problem {:?}: persistent parse failure at {:?}: {reason}",
                        problem.problem_id,
                        tree.name(node)?
                    )));
                }
                Err(e) => return Err(e),
            };
            for name in &selection {
                let (child_id, _) = children
                    .iter()
                    .find(|(_, n)| n == name)
                    .expect("selection is filtered to child names");
                if tree.is_leaf(*child_id)? {
                    leaves.push(*child_id);
                } else {
                    frontier.push_back(*child_id);
                }
            }
        }
    }
    if leaves.is_empty() {
        // Root selected only branches that later came back empty. Emitting a
        // chain-less record would break every downstream consumer, so this
        // counts as a per-problem failure.
        return Err(Error::Attribution(format!(
            "problem {:?}: every selected branch was abandoned before a leaf",
            problem.problem_id
        )));
    }
    leaves.sort_unstable();
    leaves.dedup();
    let chains = leaves
        .into_iter()
        .map(|leaf| tree.chain_to(leaf))
        .collect::<Result<Vec<_>>>()?;
    Ok(AttributionRecord {
        problem_id: problem.problem_id.clone(),
        chains,
        model: opts.model.clone(),
        prompt_version: PROMPT_VERSION.to_string(),
        fallback,
    })
}

/// Attribute every problem of a corpus, up to `max_in_flight` problems in
/// parallel. Per-problem failures are collected rather than aborting; call
/// [`AttributionOutcome::check_failure_rate`] to enforce the threshold.
pub fn attribute_corpus(
    corpus: &FilteredCorpus,
    tree: &SkillTree,
    client: &ChatClient,
    opts: &AttributeOptions,
) -> Result<AttributionOutcome> {
    let problems = corpus.records();
    let total = problems.len();
    let mut records: Vec<Option<AttributionRecord>> = vec![None; total];
    let mut failures: Vec<AttributionFailure> = Vec::new();
    if total > 0 {
        let next = AtomicUsize::new(0);
        let done = AtomicUsize::new(0);
        let out: Mutex<Vec<(usize, Result<AttributionRecord>)>> = Mutex::new(Vec::new());
        let workers = opts.max_in_flight.max(1).min(total);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= total {
                        return;
                    }
                    let outcome = attribute(&problems[i], tree, client, opts);
                    let finished = done.fetch_add(1, Ordering::SeqCst) + 1;
                    if opts.progress_every > 0 && finished.is_multiple_of(opts.progress_every) {
                        tracing::info!("attributed {finished}/{total} problems");
                    }
                    out.lock()
                        .expect("attribution results lock")
                        .push((i, outcome));
                });
            }
        });
        let mut out = out.into_inner().expect("attribution results lock");
        out.sort_by_key(|(i, _)| *i);
        for (i, outcome) in out {
            match outcome {
                Ok(record) => records[i] = Some(record),
                Err(e) => failures.push(AttributionFailure {
                    problem_id: problems[i].problem_id.clone(),
                    stage: "attribute".to_string(),
                    reason: e.to_string(),
                }),
            }
        }
    }
    Ok(AttributionOutcome {
        records: records.into_iter().flatten().collect(),
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chat::{ResponseCache, RetryPolicy, ScriptRule, ScriptedTransport};
    use crate::corpus::TeacherResponse;

    fn problem(id: &str, question: &str, solution: &str) -> ProblemRecord {
        ProblemRecord {
            problem_id: id.to_string(),
            question: question.to_string(),
            ground_truth: Some("42".to_string()),
            responses: vec![TeacherResponse {
                generator: "teacher".to_string(),
                solution: solution.to_string(),
                predicted_answer: "42".to_string(),
            }],
        }
    }

    fn paper_tree() -> SkillTree {
        SkillTree::from_json(
            r#"{"name":"Mathematics","children":[{"name":"Probability","children":[{"name":"Bayes' theorem"}]},{"name":"Algebra","children":[{"name":"Linear equations"}]}]}"#,
        )
        .unwrap()
    }

    fn client(rules: Vec<ScriptRule>) -> ChatClient {
        ChatClient::new(
            Box::new(ScriptedTransport::new(rules)),
            ResponseCache::in_memory(),
            RetryPolicy::immediate(3),
        )
    }

    #[test]
    fn prompt_lists_children_as_bullets() {
        let p = problem("p1", "A coin question", "Use Bayes.");
        let messages = build_prompt(&p, &["Probability", "Algebra"]);
        let content = &messages[0].content;
        assert!(content.contains("- Probability\n- Algebra"));
        assert!(content.contains("Q&A: A coin question\n\nUse Bayes."));
        assert!(content.contains("Even the most basic skills"));
        assert!(content.ends_with("Answer as a Python list of strings."));
    }

    #[test]
    fn prompt_single_child_single_bullet() {
        let p = problem("p1", "q", "s");
        let messages = build_prompt(&p, &["Probability"]);
        assert!(messages[0].content.contains("Skills:\n- Probability\n\n"));
    }

    #[test]
    fn parse_plain_list() {
        let out = parse_skill_selection(r#"["Probability"]"#, &["Probability", "Algebra"]).unwrap();
        assert_eq!(out, vec!["Probability"]);
    }

    #[test]
    fn parse_reorders_to_allowed_order() {
        let reply = "Sure! The involved skills are: ['Algebra', 'Probability']";
        let out = parse_skill_selection(reply, &["Probability", "Algebra"]).unwrap();
        assert_eq!(out, vec!["Probability", "Algebra"]);
    }

    #[test]
    fn parse_drops_unknown_names() {
        let out = parse_skill_selection(r#"["Geometry"]"#, &["Probability"]).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn parse_error_when_no_list() {
        let err = parse_skill_selection("I cannot answer that.", &["Probability"]).unwrap_err();
        assert!(matches!(err, Error::SelectionParse(_)));
    }

    #[test]
    fn parse_skips_non_string_brackets() {
        let out =
            parse_skill_selection("[1] first try [\"Probability\"]", &["Probability"]).unwrap();
        assert_eq!(out, vec!["Probability"]);
    }

    #[test]
    fn parse_empty_list_is_empty_selection() {
        let out = parse_skill_selection("[]", &["Probability"]).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn attribute_walks_to_paper_leaf_in_two_calls() {
        let tree = paper_tree();
        let p = problem("p1", "A Bayes question", "Apply Bayes' theorem.");
        let client = client(vec![
            ScriptRule::new(&["- Probability"], r#"["Probability"]"#),
            ScriptRule::new(&["- Bayes' theorem"], r#"["Bayes' theorem"]"#),
        ]);
        let record = attribute(&p, &tree, &client, &AttributeOptions::default()).unwrap();
        assert_eq!(record.chains.len(), 1);
        assert_eq!(
            record.chains[0].path,
            vec!["Mathematics", "Probability", "Bayes' theorem"]
        );
        assert_eq!(client.network_calls(), 2);
        assert!(!record.fallback);
    }

    #[test]
    fn attribute_depth_zero_tree_zero_calls() {
        let tree = SkillTree::from_json(r#"{"name":"Root"}"#).unwrap();
        let p = problem("p1", "q", "s");
        let client = client(vec![]);
        let record = attribute(&p, &tree, &client, &AttributeOptions::default()).unwrap();
        assert_eq!(record.chains[0].path, vec!["Root"]);
        assert_eq!(client.network_calls(), 0);
    }

    #[test]
    fn attribute_empty_root_selection_falls_back_to_first_leaf() {
        let tree = paper_tree();
        let p = problem("p1", "q", "s");
        let client = client(vec![ScriptRule::new(&["- Probability"], "[]")]);
        let record = attribute(&p, &tree, &client, &AttributeOptions::default()).unwrap();
        assert!(record.fallback);
        // "Bayes' theorem" sorts before "Linear equations".
        assert_eq!(
            record.chains[0].path,
            vec!["Mathematics", "Probability", "Bayes' theorem"]
        );
        // One base ask plus two retries.
        assert_eq!(client.network_calls(), 3);
    }

    #[test]
    fn attribute_abandons_empty_internal_branch() {
        let tree = paper_tree();
        let p = problem("p1", "q", "s");
        let client = client(vec![
            ScriptRule::new(&["- Probability"], r#"["Probability", "Algebra"]"#),
            ScriptRule::new(&["- Bayes' theorem"], "[]"),
            ScriptRule::new(&["- Linear equations"], r#"["Linear equations"]"#),
        ]);
        let record = attribute(&p, &tree, &client, &AttributeOptions::default()).unwrap();
        assert_eq!(record.chains.len(), 1);
        assert_eq!(
            record.chains[0].path,
            vec!["Mathematics", "Algebra", "Linear equations"]
        );
        assert!(!record.fallback);
    }

    #[test]
    fn attribute_retries_unparseable_reply_with_suffix() {
        let tree = paper_tree();
        let p = problem("p1", "q", "s");
        // The base prompt draws prose; the suffixed retry draws a list.
        let client = client(vec![
            ScriptRule::new(
                &["- Probability", RETRY_SUFFIX.trim_start()],
                r#"["Probability"]"#,
            ),
            ScriptRule::new(&["- Probability"], "no list here"),
            ScriptRule::new(&["- Bayes' theorem"], r#"["Bayes' theorem"]"#),
        ]);
        let record = attribute(&p, &tree, &client, &AttributeOptions::default()).unwrap();
        assert_eq!(record.chains.len(), 1);
        assert!(!record.fallback);
        // base root ask + retry + leaf-level ask
        assert_eq!(client.network_calls(), 3);
    }

    #[test]
    fn attribute_all_branches_abandoned_is_an_error() {
        let tree = paper_tree();
        let p = problem("p1", "q", "s");
        let client = client(vec![
            ScriptRule::new(&["- Probability"], r#"["Probability"]"#),
            ScriptRule::new(&["- Bayes' theorem"], "[]"),
        ]);
        let err = attribute(&p, &tree, &client, &AttributeOptions::default()).unwrap_err();
        assert!(err.to_string().contains("abandoned"));
    }

    #[test]
    fn attribute_internal_parse_failure_is_an_error() {
        let tree = paper_tree();
        let p = problem("p1", "q", "s");
        let client = client(vec![
            ScriptRule::new(&["- Probability"], r#"["Probability"]"#),
            ScriptRule::new(&["- Bayes' theorem"], "never a list"),
        ]);
        let err = attribute(&p, &tree, &client, &AttributeOptions::default()).unwrap_err();
        assert!(err.to_string().contains("persistent parse failure"));
    }

    #[test]
    fn attribute_corpus_empty_is_empty() {
        let tree = paper_tree();
        let corpus = FilteredCorpus::from_records(vec![]).unwrap();
        let client = client(vec![]);
        let out = attribute_corpus(&corpus, &tree, &client, &AttributeOptions::default()).unwrap();
        assert!(out.records.is_empty());
        assert!(out.failures.is_empty());
    }

    #[test]
    fn attribute_corpus_collects_failures() {
        let tree = paper_tree();
        let corpus = FilteredCorpus::from_records(vec![
            problem("p1", "good question", "Apply Bayes' theorem."),
            problem("p2", "bad question", "???"),
        ])
        .unwrap();
        let client = client(vec![
            // p2's internal ask never parses; p1 resolves normally.
            ScriptRule::new(&["good question", "- Probability"], r#"["Probability"]"#),
            ScriptRule::new(
                &["good question", "- Bayes' theorem"],
                r#"["Bayes' theorem"]"#,
            ),
            ScriptRule::new(&["bad question", "- Probability"], r#"["Probability"]"#),
            ScriptRule::new(&["bad question", "- Bayes' theorem"], "never a list"),
        ]);
        let out = attribute_corpus(&corpus, &tree, &client, &AttributeOptions::default()).unwrap();
        // p2's only selected branch was abandoned, so it fails rather than
        // emitting a chain-less record.
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].problem_id, "p1");
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].problem_id, "p2");
        assert!(out.check_failure_rate(0.01).is_err());
        assert!(out.check_failure_rate(0.5).is_ok());
    }

    #[test]
    fn outcome_failure_rate_check() {
        let outcome = AttributionOutcome {
            records: vec![],
            failures: vec![AttributionFailure {
                problem_id: "p".into(),
                stage: "attribute".into(),
                reason: "r".into(),
            }],
        };
        assert!(outcome.check_failure_rate(0.5).is_err());
        assert!(outcome.check_failure_rate(1.0).is_ok());
    }
}
