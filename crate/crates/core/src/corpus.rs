//! Teacher QA pool ingestion and filtering.
//!
//! Filtering runs four stages: drop problems without a ground-truth answer,
//! keep only teacher responses whose predicted final answer grades equal to
//! the ground truth, retain the first surviving response per problem, and
//! deduplicate by normalized question text. Stage counts are tracked in
//! [`Provenance`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::BufRead;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One candidate response attached to a problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TeacherResponse {
    pub generator: String,
    pub solution: String,
    pub predicted_answer: String,
}

/// One teacher QA record. Before filtering, `ground_truth` may be absent and
/// `responses` may hold any number of candidates; after filtering, the
/// ground truth is present and exactly one response is retained.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub problem_id: String,
    pub question: String,
    pub ground_truth: Option<String>,
    pub responses: Vec<TeacherResponse>,
}

impl ProblemRecord {
    /// The single surviving response of a filtered record.
    pub fn retained_response(&self) -> Result<&TeacherResponse> {
        match self.responses.as_slice() {
            [one] => Ok(one),
            _ => Err(Error::Corpus(format!(
                "problem {:?} has {} responses; expected exactly one retained response",
                self.problem_id,
                self.responses.len()
            ))),
        }
    }
}

/// Per-stage record counts. `input` telescopes into the drop counts plus the
/// post-dedup size.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub input: usize,
    pub dropped_no_gt: usize,
    pub dropped_no_valid_response: usize,
    pub after_dedup: usize,
    pub after_downsample: usize,
}

/// A filtered, deduplicated corpus.
#[derive(Debug, Clone)]
pub struct FilteredCorpus {
    records: Vec<ProblemRecord>,
    provenance: Provenance,
    index: HashMap<String, usize>,
}

impl FilteredCorpus {
    fn build(records: Vec<ProblemRecord>, provenance: Provenance) -> Self {
        let index = records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.problem_id.clone(), i))
            .collect();
        Self {
            records,
            provenance,
            index,
        }
    }

    /// Reconstruct a corpus from already-filtered records (e.g. a stage
    /// artifact read back from disk). Validates the post-filter invariants.
    pub fn from_records(records: Vec<ProblemRecord>) -> Result<Self> {
        let mut seen_ids = HashSet::new();
        let mut seen_questions = HashSet::new();
        for r in &records {
            if r.ground_truth.is_none() {
                return Err(Error::Corpus(format!(
                    "filtered record {:?} is missing its ground truth",
                    r.problem_id
                )));
            }
            r.retained_response()?;
            if !seen_ids.insert(r.problem_id.clone()) {
                return Err(Error::Corpus(format!(
                    "duplicate problem_id {:?}",
                    r.problem_id
                )));
            }
            if !seen_questions.insert(normalize_question(&r.question)) {
                return Err(Error::Corpus(format!(
                    "duplicate normalized question for problem {:?}",
                    r.problem_id
                )));
            }
        }
        let n = records.len();
        let provenance = Provenance {
            input: n,
            dropped_no_gt: 0,
            dropped_no_valid_response: 0,
            after_dedup: n,
            after_downsample: n,
        };
        Ok(Self::build(records, provenance))
    }

    pub fn records(&self) -> &[ProblemRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn get(&self, problem_id: &str) -> Option<&ProblemRecord> {
        self.index.get(problem_id).map(|&i| &self.records[i])
    }
}

/// A malformed input line, kept for the rejects report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RejectEntry {
    pub line_number: usize,
    pub reason: String,
}

/// Parsed records plus the rejects report.
#[derive(Debug)]
pub struct Ingest {
    pub records: Vec<ProblemRecord>,
    pub rejects: Vec<RejectEntry>,
}

/// Options controlling [`ingest`]. `max_malformed_fraction` aborts the whole
/// ingest when exceeded (strictly greater).
#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub max_malformed_fraction: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            max_malformed_fraction: 0.01,
        }
    }
}

/// Parse a JSON Lines record stream, preserving order. Malformed lines are
/// collected into the rejects report rather than silently dropped; blank
/// lines are ignored.
pub fn ingest<R: BufRead>(reader: R, opts: &IngestOptions) -> Result<Ingest> {
    let mut records: Vec<ProblemRecord> = Vec::new();
    let mut rejects: Vec<RejectEntry> = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    let mut total = 0usize;
    for (i, line) in reader.lines().enumerate() {
        let line_number = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        match serde_json::from_str::<ProblemRecord>(&line) {
            Ok(record) => {
                if !seen_ids.insert(record.problem_id.clone()) {
                    return Err(Error::Corpus(format!(
                        "duplicate problem_id {:?} at line {line_number}",
                        record.problem_id
                    )));
                }
                records.push(record);
            }
            Err(e) => rejects.push(RejectEntry {
                line_number,
                reason: e.to_string(),
            }),
        }
    }
    if total > 0 {
        let fraction = rejects.len() as f64 / total as f64;
        if fraction > opts.max_malformed_fraction {
            return Err(Error::Corpus(format!(
                "{} of {} lines malformed ({:.2}%), above the {:.2}% limit",
                rejects.len(),
                total,
                fraction * 100.0,
                opts.max_malformed_fraction * 100.0
            )));
        }
    }
    Ok(Ingest { records, rejects })
}

/// Question normalization used for dedup and leakage checks: trim, collapse
/// internal whitespace runs to single spaces, case-fold.
pub fn normalize_question(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Run the four filtering stages over ingested records.
///
/// The grader must be deterministic; the same grader is shared with the
/// evaluation harness so "exactly matches" means the same thing in both
/// places. Ties among multiple valid teacher responses go to the first in
/// input order. Dedup keeps the record with the smallest problem_id among
/// those sharing a normalized question, so the retained problem set does not
/// depend on input order.
pub fn filter_corpus<F>(
    records: &[ProblemRecord],
    teacher_tag: &str,
    grader: F,
) -> Result<FilteredCorpus>
where
    F: Fn(&str, &str) -> bool,
{
    if records.is_empty() {
        return Err(Error::Corpus("empty input".into()));
    }
    let input = records.len();
    let mut dropped_no_gt = 0usize;
    let mut dropped_no_valid_response = 0usize;
    let mut survivors: Vec<ProblemRecord> = Vec::new();
    for record in records {
        let Some(gt) = record.ground_truth.as_deref() else {
            dropped_no_gt += 1;
            continue;
        };
        let retained = record
            .responses
            .iter()
            .find(|r| r.generator == teacher_tag && grader(&r.predicted_answer, gt));
        match retained {
            Some(response) => survivors.push(ProblemRecord {
                problem_id: record.problem_id.clone(),
                question: record.question.clone(),
                ground_truth: Some(gt.to_string()),
                responses: vec![response.clone()],
            }),
            None => dropped_no_valid_response += 1,
        }
    }
    // Dedup by normalized question, keeping the smallest problem_id.
    let mut keeper: BTreeMap<String, &str> = BTreeMap::new();
    for record in &survivors {
        let key = normalize_question(&record.question);
        match keeper.get(&key) {
            Some(&id) if id <= record.problem_id.as_str() => {}
            _ => {
                keeper.insert(key, record.problem_id.as_str());
            }
        }
    }
    let kept_ids: HashSet<&str> = keeper.values().copied().collect();
    let records: Vec<ProblemRecord> = survivors
        .iter()
        .filter(|r| kept_ids.contains(r.problem_id.as_str()))
        .cloned()
        .collect();
    let after_dedup = records.len();
    let provenance = Provenance {
        input,
        dropped_no_gt,
        dropped_no_valid_response,
        after_dedup,
        after_downsample: after_dedup,
    };
    Ok(FilteredCorpus::build(records, provenance))
}

/// Ids of corpus records whose normalized question equals any normalized
/// benchmark question.
pub fn check_leakage(corpus: &FilteredCorpus, benchmark_questions: &[String]) -> Vec<String> {
    let benchmark: HashSet<String> = benchmark_questions
        .iter()
        .map(|q| normalize_question(q))
        .collect();
    corpus
        .records()
        .iter()
        .filter(|r| benchmark.contains(&normalize_question(&r.question)))
        .map(|r| r.problem_id.clone())
        .collect()
}

/// Uniform without-replacement downsample, deterministic given `seed`.
/// Record order is preserved.
pub fn downsample(
    corpus: &FilteredCorpus,
    target_size: usize,
    seed: u64,
) -> Result<FilteredCorpus> {
    let n = corpus.len();
    if target_size > n {
        return Err(Error::Corpus(format!(
            "target size {target_size} exceeds corpus size {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, n, target_size).into_vec();
    picked.sort_unstable();
    let records: Vec<ProblemRecord> = picked
        .into_iter()
        .map(|i| corpus.records()[i].clone())
        .collect();
    let mut provenance = corpus.provenance().clone();
    provenance.after_downsample = records.len();
    Ok(FilteredCorpus::build(records, provenance))
}
