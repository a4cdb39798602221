//! Benchmark evaluation harness: boxed-answer extraction, exact-match
//! grading after light normalization, and Avg@k aggregation.
//!
//! Grading has no symbolic equivalence: `0.5` and `\frac{1}{2}` do not
//! match. The same grader backs the corpus filter, so "exactly matches"
//! means the same thing in both places.

use std::collections::HashSet;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::chat::{ChatClient, ChatMessage, ChatRequest};
use crate::error::{Error, Result};
use crate::profiler::{avg_at_k, ExampleResult};

/// Student decoding settings. Defaults: temperature 0.6, top-p 0.95,
/// 16384 max tokens, 8 samples per question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub k: u32,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        Self {
            temperature: 0.6,
            top_p: 0.95,
            max_tokens: 16384,
            k: 8,
        }
    }
}

impl DecodingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::Eval(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Eval(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        if self.k == 0 {
            return Err(Error::Eval("k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkQuestion {
    pub question_id: String,
    pub question: String,
    pub gold_answer: String,
}

/// Load benchmark questions from JSON Lines, requiring non-empty gold
/// answers and unique question ids.
pub fn load_benchmark<R: BufRead>(reader: R) -> Result<Vec<BenchmarkQuestion>> {
    let mut questions = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q: BenchmarkQuestion = serde_json::from_str(&line)
            .map_err(|e| Error::Eval(format!("bad benchmark line {}: {e}", i + 1)))?;
        if q.gold_answer.is_empty() {
            return Err(Error::Eval(format!(
                "benchmark question {:?} has an empty gold answer",
                q.question_id
            )));
        }
        if !seen.insert(q.question_id.clone()) {
            return Err(Error::Eval(format!(
                "duplicate benchmark question id {:?}",
                q.question_id
            )));
        }
        questions.push(q);
    }
    Ok(questions)
}

/// Content of the last `\boxed{...}` with balanced braces, or `None`.
/// Escaped braces (`\{`, `\}`) do not count toward the balance.
pub fn extract_final_answer(completion: &str) -> Option<String> {
    const MARKER: &str = "\\boxed{";
    let mut best: Option<String> = None;
    for (start, _) in completion.match_indices(MARKER) {
        let body = &completion[start + MARKER.len()..];
        if let Some(content) = balanced_prefix(body) {
            best = Some(content);
        }
    }
    best
}

/// The prefix of `body` up to the `}` matching an already-consumed `{`.
fn balanced_prefix(body: &str) -> Option<String> {
    let mut depth = 1usize;
    let mut out = String::new();
    let mut chars = body.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => {
                out.push(c);
                if let Some(next) = chars.next() {
                    out.push(next);
                }
            }
            '{' => {
                depth += 1;
                out.push(c);
            }
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(out);
                }
                out.push(c);
            }
            _ => out.push(c),
        }
    }
    None
}

/// Normalization applied to both sides before comparing: trim, collapse
/// whitespace runs, strip one enclosing `$...$` pair, strip one outer brace
/// pair wrapping the whole string.
pub fn normalize_answer(raw: &str) -> String {
    let collapsed = raw.split_whitespace().collect::<Vec<_>>().join(" ");
    let dollar_stripped = strip_enclosing_dollars(&collapsed);
    let trimmed = dollar_stripped.trim();
    strip_outer_braces(trimmed).trim().to_string()
}

fn strip_enclosing_dollars(s: &str) -> &str {
    if s.len() >= 2 && s.starts_with('$') && s.ends_with('$') {
        &s[1..s.len() - 1]
    } else {
        s
    }
}

/// Strip `{...}` only when the opening brace's match is the final char.
fn strip_outer_braces(s: &str) -> &str {
    if !s.starts_with('{') || !s.ends_with('}') {
        return s;
    }
    let inner = &s[1..];
    let mut depth = 1usize;
    let mut chars = inner.char_indices();
    while let Some((i, c)) = chars.next() {
        match c {
            '\\' => {
                chars.next();
            }
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return if i == inner.len() - 1 { &inner[..i] } else { s };
                }
            }
            _ => {}
        }
    }
    s
}

/// Exact-match grade after normalization. An absent prediction is wrong.
pub fn grade(pred: Option<&str>, gold: &str) -> bool {
    match pred {
        None => false,
        Some(p) => normalize_answer(p) == normalize_answer(gold),
    }
}

/// Per-question outcome of a benchmark run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionReport {
    pub question_id: String,
    pub samples: Vec<bool>,
    pub accuracy: f64,
}

/// Full benchmark report: Avg@k per question plus the aggregate mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub aggregate: f64,
    pub k: u32,
    pub decoding: DecodingConfig,
    pub per_question: Vec<QuestionReport>,
}

impl BenchmarkReport {
    /// Per-question results in profiler form.
    pub fn example_results(&self) -> Vec<ExampleResult> {
        self.per_question
            .iter()
            .map(|q| ExampleResult {
                problem_id: q.question_id.clone(),
                samples: q.samples.clone(),
            })
            .collect()
    }

    /// CSV rendering: `question_id,k,accuracy`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("question_id,k,accuracy\n");
        for q in &self.per_question {
            out.push_str(&format!(
                "{},{},{}\n",
                crate::profiler::csv_field(&q.question_id),
                q.samples.len(),
                q.accuracy
            ));
        }
        out
    }
}

/// Sample `k` completions per question and grade the boxed answers. Sample
/// indices feed the cache key, so the k samples are cached independently
/// and a warm-cache rerun is network-free.
pub fn run_benchmark(
    questions: &[BenchmarkQuestion],
    client: &ChatClient,
    model: &str,
    decoding: &DecodingConfig,
    max_in_flight: usize,
) -> Result<BenchmarkReport> {
    decoding.validate()?;
    let mut requests = Vec::with_capacity(questions.len() * decoding.k as usize);
    for q in questions {
        for sample_index in 0..decoding.k {
            requests.push(ChatRequest {
                model: model.to_string(),
                messages: vec![ChatMessage::user(q.question.clone())],
                temperature: decoding.temperature,
                top_p: decoding.top_p,
                max_tokens: decoding.max_tokens,
                sample_index,
            });
        }
    }
    let responses = client.complete_many(&requests, max_in_flight)?;
    let mut per_question = Vec::with_capacity(questions.len());
    for (qi, q) in questions.iter().enumerate() {
        let samples: Vec<bool> = (0..decoding.k as usize)
            .map(|s| {
                let response = &responses[qi * decoding.k as usize + s];
                let pred = extract_final_answer(&response.content);
                grade(pred.as_deref(), &q.gold_answer)
            })
            .collect();
        let accuracy = avg_at_k(&samples)?;
        per_question.push(QuestionReport {
            question_id: q.question_id.clone(),
            samples,
            accuracy,
        });
    }
    let aggregate = if per_question.is_empty() {
        0.0
    } else {
        per_question.iter().map(|q| q.accuracy).sum::<f64>() / per_question.len() as f64
    };
    Ok(BenchmarkReport {
        aggregate,
        k: decoding.k,
        decoding: decoding.clone(),
        per_question,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chat::{ResponseCache, RetryPolicy, ScriptRule, ScriptedTransport};

    #[test]
    fn extract_simple_boxed() {
        assert_eq!(
            extract_final_answer("... the answer is \\boxed{42}.").as_deref(),
            Some("42")
        );
    }

    #[test]
    fn extract_takes_last_balanced() {
        assert_eq!(
            extract_final_answer("\\boxed{a} then \\boxed{\\frac{1}{2}}").as_deref(),
            Some("\\frac{1}{2}")
        );
    }

    #[test]
    fn extract_none_without_boxed() {
        assert_eq!(extract_final_answer("no box here"), None);
        assert_eq!(extract_final_answer(""), None);
    }

    #[test]
    fn extract_skips_unbalanced_tail() {
        // The final occurrence never closes; the earlier one wins.
        assert_eq!(
            extract_final_answer("\\boxed{7} and \\boxed{open").as_deref(),
            Some("7")
        );
    }

    #[test]
    fn extract_handles_escaped_braces() {
        assert_eq!(
            extract_final_answer("\\boxed{\\{1, 2\\}}").as_deref(),
            Some("\\{1, 2\\}")
        );
    }

    #[test]
    fn grade_exact() {
        assert!(grade(Some("42"), "42"));
        assert!(!grade(Some("41"), "42"));
        assert!(!grade(None, "42"));
    }

    #[test]
    fn grade_strips_dollars_and_braces() {
        assert!(grade(Some("$\\frac{1}{2}$"), "\\frac{1}{2}"));
        assert!(grade(Some("{42}"), "42"));
        assert!(grade(Some("  4 2 "), "4 2"));
    }

    #[test]
    fn grade_has_no_symbolic_equivalence() {
        assert!(!grade(Some("0.5"), "\\frac{1}{2}"));
    }

    #[test]
    fn grade_keeps_non_wrapping_braces() {
        // The outer braces do not wrap the whole string here.
        assert!(grade(Some("{1}+{2}"), "{1}+{2}"));
        assert!(!grade(Some("{1}+{2}"), "1+2"));
    }

    #[test]
    fn grade_is_symmetric_for_present_predictions() {
        for (a, b) in [("$x$", "x"), ("{y}", "y"), ("a  b", "a b"), ("n", "m")] {
            assert_eq!(grade(Some(a), b), grade(Some(b), a));
        }
    }

    #[test]
    fn load_benchmark_requires_gold() {
        let good = r#"{"question_id":"q1","question":"1+1?","gold_answer":"2"}"#;
        assert_eq!(load_benchmark(good.as_bytes()).unwrap().len(), 1);
        let bad = r#"{"question_id":"q1","question":"1+1?","gold_answer":""}"#;
        assert!(load_benchmark(bad.as_bytes()).is_err());
    }

    fn mock_client(rules: Vec<ScriptRule>) -> ChatClient {
        ChatClient::new(
            Box::new(ScriptedTransport::new(rules)),
            ResponseCache::in_memory(),
            RetryPolicy::immediate(3),
        )
    }

    fn two_question_bench() -> Vec<BenchmarkQuestion> {
        vec![
            BenchmarkQuestion {
                question_id: "q1".into(),
                question: "first question".into(),
                gold_answer: "1".into(),
            },
            BenchmarkQuestion {
                question_id: "q2".into(),
                question: "second question".into(),
                gold_answer: "2".into(),
            },
        ]
    }

    #[test]
    fn benchmark_aggregate_hand_computed() {
        // q1 correct on both samples, q2 wrong on both: (1.0 + 0.0) / 2.
        let client = mock_client(vec![
            ScriptRule::new(&["first question"], "\\boxed{1}"),
            ScriptRule::new(&["second question"], "\\boxed{9}"),
        ]);
        let decoding = DecodingConfig {
            k: 2,
            max_tokens: 64,
            ..DecodingConfig::default()
        };
        let report =
            run_benchmark(&two_question_bench(), &client, "student", &decoding, 2).unwrap();
        assert_eq!(report.aggregate, 0.5);
        assert_eq!(report.per_question[0].samples, vec![true, true]);
        assert_eq!(report.per_question[1].samples, vec![false, false]);
        // Two questions times two samples, all distinct cache keys.
        assert_eq!(client.network_calls(), 4);
    }

    #[test]
    fn benchmark_aggregate_three_quarters() {
        // [T,T] and [T,F] → (1.0 + 0.5) / 2 = 0.75.
        use crate::chat::{ChatResponse, FinishReason, FnTransport, TokenUsage};
        let transport = FnTransport(|req: &ChatRequest| {
            let text = req.last_user_content().unwrap_or_default();
            let content = if text.contains("second question") && req.sample_index == 1 {
                "\\boxed{wrong}".to_string()
            } else if text.contains("second question") {
                "\\boxed{2}".to_string()
            } else {
                "\\boxed{1}".to_string()
            };
            Ok(ChatResponse {
                content,
                finish_reason: FinishReason::Stop,
                usage: TokenUsage::default(),
            })
        });
        let client = ChatClient::new(
            Box::new(transport),
            ResponseCache::in_memory(),
            RetryPolicy::immediate(3),
        );
        let decoding = DecodingConfig {
            k: 2,
            max_tokens: 64,
            ..DecodingConfig::default()
        };
        let report =
            run_benchmark(&two_question_bench(), &client, "student", &decoding, 2).unwrap();
        assert_eq!(report.aggregate, 0.75);
        assert_eq!(report.per_question[0].samples, vec![true, true]);
        assert_eq!(report.per_question[1].samples, vec![true, false]);
    }

    #[test]
    fn benchmark_k1_is_plain_accuracy() {
        let client = mock_client(vec![
            ScriptRule::new(&["first question"], "\\boxed{1}"),
            ScriptRule::new(&["second question"], "\\boxed{9}"),
        ]);
        let decoding = DecodingConfig {
            k: 1,
            max_tokens: 64,
            ..DecodingConfig::default()
        };
        let report =
            run_benchmark(&two_question_bench(), &client, "student", &decoding, 2).unwrap();
        assert_eq!(report.aggregate, 0.5);
    }

    #[test]
    fn benchmark_warm_cache_rerun_is_network_free() {
        let rules = vec![
            ScriptRule::new(&["first question"], "\\boxed{1}"),
            ScriptRule::new(&["second question"], "\\boxed{2}"),
        ];
        let client = mock_client(rules);
        let decoding = DecodingConfig {
            k: 2,
            max_tokens: 64,
            ..DecodingConfig::default()
        };
        let first = run_benchmark(&two_question_bench(), &client, "student", &decoding, 2).unwrap();
        let calls = client.network_calls();
        let second =
            run_benchmark(&two_question_bench(), &client, "student", &decoding, 2).unwrap();
        assert_eq!(client.network_calls(), calls);
        assert_eq!(first, second);
    }

    #[test]
    fn aggregate_invariant_under_question_permutation() {
        let client = mock_client(vec![
            ScriptRule::new(&["first question"], "\\boxed{1}"),
            ScriptRule::new(&["second question"], "\\boxed{9}"),
        ]);
        let decoding = DecodingConfig {
            k: 2,
            max_tokens: 64,
            ..DecodingConfig::default()
        };
        let mut questions = two_question_bench();
        let forward = run_benchmark(&questions, &client, "student", &decoding, 2).unwrap();
        questions.reverse();
        let backward = run_benchmark(&questions, &client, "student", &decoding, 2).unwrap();
        assert_eq!(forward.aggregate, backward.aggregate);
    }
}
