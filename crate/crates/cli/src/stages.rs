//! Pipeline stages. Each stage reads its prerequisites, writes its artifacts
//! atomically with manifests, and prints a one-line summary.

use std::collections::HashSet;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;

use skill_loom_core::attribution::{attribute_corpus, AttributeOptions, AttributionRecord};
use skill_loom_core::augmenter::{emit_sft_records, AugmentVariant, SftLine};
use skill_loom_core::chat::{
    ChatClient, ChatMessage, ChatRequest, HttpTransport, ResponseCache, RetryPolicy,
    ScriptedTransport, Transport,
};
use skill_loom_core::corpus::{
    check_leakage, downsample, filter_corpus, ingest, FilteredCorpus, IngestOptions, ProblemRecord,
};
use skill_loom_core::eval::{
    extract_final_answer, grade, load_benchmark, run_benchmark, DecodingConfig,
};
use skill_loom_core::jsonl;
use skill_loom_core::profiler::{
    build_profile, profile_report, profile_to_named, report_to_csv, ExampleResult, LeafStats,
    SkillProfile,
};
use skill_loom_core::sampler::{sample_subset, skill_probabilities, SamplerConfig, SamplingPlan};
use skill_loom_core::sim::{canonical_tree, run_closed_loop, SamplingPolicy, SimConfig};
use skill_loom_core::taxonomy::SkillTree;

use crate::config::PipelineConfig;
use crate::error::StageError;
use crate::manifest::{write_artifact, Manifest};

pub const FILTERED: &str = "filtered.jsonl";
pub const PROVENANCE: &str = "provenance.json";
pub const REJECTS: &str = "rejects.jsonl";
pub const ATTRIBUTIONS: &str = "attributions.jsonl";
pub const ATTRIBUTION_FAILURES: &str = "attribution_failures.jsonl";
pub const RESULTS: &str = "results.jsonl";
pub const PROFILE_JSON: &str = "profile.json";
pub const PROFILE_CSV: &str = "profile.csv";
pub const PLAN: &str = "plan.json";
pub const SFT: &str = "sft.jsonl";
pub const EVAL_JSON: &str = "eval_report.json";
pub const EVAL_CSV: &str = "eval_report.csv";
pub const TRAJECTORY: &str = "trajectory.csv";
pub const SIM_SUMMARY: &str = "sim_summary.json";

pub struct StageContext {
    pub config: PipelineConfig,
}

impl StageContext {
    pub fn new(config: PipelineConfig) -> Self {
        Self { config }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.config.out_dir.join(name)
    }

    fn manifest(&self, stage: &str) -> Manifest {
        Manifest::new(stage, &self.config.digest(), self.config.seed)
    }

    fn client(&self) -> Result<ChatClient, StageError> {
        let transport: Box<dyn Transport> = match self.config.transport.as_str() {
            "scripted" => {
                let script = self
                    .config
                    .script
                    .as_ref()
                    .expect("validated: scripted transport has a script");
                Box::new(ScriptedTransport::from_path(script)?)
            }
            _ => Box::new(HttpTransport::from_env(
                self.config.base_url.clone(),
                Duration::from_secs(self.config.request_timeout_secs),
            )),
        };
        let cache = ResponseCache::open(&self.config.cache_path())?;
        let retry = RetryPolicy {
            max_attempts: self.config.retry_attempts.max(1),
            base_delay: Duration::from_millis(self.config.retry_base_delay_ms),
            max_delay: Duration::from_secs(30),
        };
        Ok(ChatClient::new(transport, cache, retry))
    }

    fn tree(&self) -> Result<SkillTree, StageError> {
        require(&self.config.taxonomy, "taxonomy file")?;
        Ok(SkillTree::from_path(&self.config.taxonomy)?)
    }

    fn filtered_corpus(&self) -> Result<FilteredCorpus, StageError> {
        let path = self.out(FILTERED);
        require(&path, "run `skill-loom filter` first")?;
        let records: Vec<ProblemRecord> = jsonl::read_jsonl_file(&path)?;
        Ok(FilteredCorpus::from_records(records)?)
    }

    fn attributions(&self) -> Result<Vec<AttributionRecord>, StageError> {
        let path = self.out(ATTRIBUTIONS);
        require(&path, "run `skill-loom attribute` first")?;
        Ok(jsonl::read_jsonl_file(&path)?)
    }
}

fn require(path: &Path, hint: &str) -> Result<(), StageError> {
    if !path.exists() {
        return Err(StageError::MissingPrerequisite(format!(
            "{} ({hint})",
            path.display()
        )));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct FilterSummary {
    input: usize,
    dropped_no_gt: usize,
    dropped_no_valid_response: usize,
    after_dedup: usize,
    after_downsample: usize,
    leaked_dropped: usize,
    leaked_ids: Vec<String>,
    rejects: usize,
    records_written: usize,
}

pub fn run_filter(ctx: &StageContext) -> Result<(), StageError> {
    let config = &ctx.config;
    require(&config.corpus, "corpus input file")?;
    let file = std::fs::File::open(&config.corpus)?;
    let opts = IngestOptions {
        max_malformed_fraction: config.max_malformed_fraction,
    };
    let ingested = ingest(BufReader::new(file), &opts)?;
    let corpus = filter_corpus(&ingested.records, &config.teacher_tag, |pred, gold| {
        grade(Some(pred), gold)
    })?;

    // Leakage screen against the benchmark, when configured.
    let mut leaked_ids: Vec<String> = Vec::new();
    if let Some(benchmark_path) = &config.benchmark {
        require(benchmark_path, "benchmark file named in config")?;
        let questions = load_benchmark(BufReader::new(std::fs::File::open(benchmark_path)?))?;
        let texts: Vec<String> = questions.into_iter().map(|q| q.question).collect();
        leaked_ids = check_leakage(&corpus, &texts);
    }
    let leaked: HashSet<&str> = leaked_ids.iter().map(String::as_str).collect();
    let kept: Vec<ProblemRecord> = corpus
        .records()
        .iter()
        .filter(|r| !leaked.contains(r.problem_id.as_str()))
        .cloned()
        .collect();

    let mut provenance = corpus.provenance().clone();
    let final_records = match config.downsample_target {
        Some(target) => {
            let clean = FilteredCorpus::from_records(kept)?;
            let sampled = downsample(&clean, target, config.seed)?;
            provenance.after_downsample = sampled.len();
            sampled.records().to_vec()
        }
        None => kept,
    };

    let manifest = || -> Result<Manifest, StageError> {
        let mut m = ctx.manifest("filter").input("corpus", &config.corpus)?;
        if let Some(benchmark) = &config.benchmark {
            m = m.input("benchmark", benchmark)?;
        }
        Ok(m)
    };
    write_artifact(
        &ctx.out(FILTERED),
        jsonl::to_jsonl_string(&final_records)?.as_bytes(),
        manifest()?,
    )?;
    write_artifact(
        &ctx.out(REJECTS),
        jsonl::to_jsonl_string(&ingested.rejects)?.as_bytes(),
        manifest()?,
    )?;
    let summary = FilterSummary {
        input: provenance.input,
        dropped_no_gt: provenance.dropped_no_gt,
        dropped_no_valid_response: provenance.dropped_no_valid_response,
        after_dedup: provenance.after_dedup,
        after_downsample: provenance.after_downsample,
        leaked_dropped: leaked_ids.len(),
        leaked_ids,
        rejects: ingested.rejects.len(),
        records_written: final_records.len(),
    };
    write_artifact(
        &ctx.out(PROVENANCE),
        pretty(&summary)?.as_bytes(),
        manifest()?,
    )?;
    println!(
        "filter: {} in, {} kept ({} rejects, {} leaked) -> {}",
        summary.input,
        summary.records_written,
        summary.rejects,
        summary.leaked_dropped,
        ctx.out(FILTERED).display()
    );
    Ok(())
}

pub fn run_attribute(ctx: &StageContext) -> Result<(), StageError> {
    let config = &ctx.config;
    let tree = ctx.tree()?;
    let corpus = ctx.filtered_corpus()?;
    let client = ctx.client()?;
    let opts = AttributeOptions {
        model: config.labeler_model.clone(),
        temperature: config.label_temperature,
        top_p: 1.0,
        max_tokens: config.label_max_tokens,
        parse_retries: config.parse_retries,
        max_in_flight: config.max_in_flight,
        progress_every: config.progress_every,
        failure_threshold: config.attribution_failure_threshold,
    };
    let outcome = attribute_corpus(&corpus, &tree, &client, &opts)?;
    let manifest = || -> Result<Manifest, StageError> {
        ctx.manifest("attribute")
            .input("filtered", &ctx.out(FILTERED))?
            .input("taxonomy", &config.taxonomy)
    };
    write_artifact(
        &ctx.out(ATTRIBUTIONS),
        jsonl::to_jsonl_string(&outcome.records)?.as_bytes(),
        manifest()?,
    )?;
    write_artifact(
        &ctx.out(ATTRIBUTION_FAILURES),
        jsonl::to_jsonl_string(&outcome.failures)?.as_bytes(),
        manifest()?,
    )?;
    println!(
        "attribute: {} records, {} failures, {} network calls -> {}",
        outcome.records.len(),
        outcome.failures.len(),
        client.network_calls(),
        ctx.out(ATTRIBUTIONS).display()
    );
    outcome.check_failure_rate(config.attribution_failure_threshold)?;
    Ok(())
}

/// Results for the attributed problems: read from the configured file, or
/// sample the student on each corpus question and grade against the ground
/// truth.
fn obtain_results(
    ctx: &StageContext,
    corpus: &FilteredCorpus,
    attributions: &[AttributionRecord],
) -> Result<(Vec<ExampleResult>, Option<PathBuf>), StageError> {
    let config = &ctx.config;
    if let Some(results_path) = &config.results {
        require(results_path, "results file named in config")?;
        let results: Vec<ExampleResult> = jsonl::read_jsonl_file(results_path)?;
        let attributed: HashSet<&str> =
            attributions.iter().map(|r| r.problem_id.as_str()).collect();
        let filtered: Vec<ExampleResult> = results
            .into_iter()
            .filter(|r| attributed.contains(r.problem_id.as_str()))
            .collect();
        return Ok((filtered, None));
    }
    let client = ctx.client()?;
    let k = config.profile_k;
    DecodingConfig {
        temperature: config.eval_temperature,
        top_p: config.eval_top_p,
        max_tokens: config.eval_max_tokens,
        k,
    }
    .validate()?;
    let mut requests = Vec::new();
    let mut order: Vec<&ProblemRecord> = Vec::new();
    for record in attributions {
        let problem = corpus.get(&record.problem_id).ok_or_else(|| {
            StageError::Validation(format!(
                "attribution for {:?} has no corpus record; stale artifacts?",
                record.problem_id
            ))
        })?;
        order.push(problem);
        for sample_index in 0..k {
            requests.push(ChatRequest {
                model: config.student_model.clone(),
                messages: vec![ChatMessage::user(problem.question.clone())],
                temperature: config.eval_temperature,
                top_p: config.eval_top_p,
                max_tokens: config.eval_max_tokens,
                sample_index,
            });
        }
    }
    let responses = client.complete_many(&requests, config.max_in_flight)?;
    let mut results = Vec::with_capacity(order.len());
    for (i, problem) in order.iter().enumerate() {
        let gold = problem
            .ground_truth
            .as_deref()
            .expect("filtered records have a ground truth");
        let samples: Vec<bool> = (0..k as usize)
            .map(|s| {
                let response = &responses[i * k as usize + s];
                grade(extract_final_answer(&response.content).as_deref(), gold)
            })
            .collect();
        results.push(ExampleResult {
            problem_id: problem.problem_id.clone(),
            samples,
        });
    }
    println!(
        "profile: sampled student on {} problems (k={k}, {} network calls)",
        order.len(),
        client.network_calls()
    );
    let out = ctx.out(RESULTS);
    let manifest = ctx
        .manifest("profile")
        .input("filtered", &ctx.out(FILTERED))?
        .input("attributions", &ctx.out(ATTRIBUTIONS))?;
    write_artifact(&out, jsonl::to_jsonl_string(&results)?.as_bytes(), manifest)?;
    Ok((results, Some(out)))
}

pub fn run_profile(ctx: &StageContext) -> Result<(), StageError> {
    let tree = ctx.tree()?;
    let corpus = ctx.filtered_corpus()?;
    let attributions = ctx.attributions()?;
    let (results, results_artifact) = obtain_results(ctx, &corpus, &attributions)?;
    let profile = build_profile(&tree, &attributions, &results)?;
    let named = profile_to_named(&tree, &profile)?;
    let rows = profile_report(&tree, &profile)?;
    let manifest = || -> Result<Manifest, StageError> {
        let mut m = ctx
            .manifest("profile")
            .input("filtered", &ctx.out(FILTERED))?
            .input("attributions", &ctx.out(ATTRIBUTIONS))?;
        if let Some(results_path) = &ctx.config.results {
            m = m.input("results", results_path)?;
        } else if let Some(results_path) = &results_artifact {
            m = m.input("results", results_path)?;
        }
        Ok(m)
    };
    write_artifact(
        &ctx.out(PROFILE_JSON),
        pretty(&named)?.as_bytes(),
        manifest()?,
    )?;
    write_artifact(
        &ctx.out(PROFILE_CSV),
        report_to_csv(&rows).as_bytes(),
        manifest()?,
    )?;
    let defined = profile.defined().count();
    let undefined = profile.undefined().count();
    println!(
        "profile: {} examples over {} leaves ({} undefined) -> {}",
        results.len(),
        defined + undefined,
        undefined,
        ctx.out(PROFILE_JSON).display()
    );
    Ok(())
}

/// Rebuild the in-memory profile from the name-keyed artifact.
fn load_profile(ctx: &StageContext, tree: &SkillTree) -> Result<SkillProfile, StageError> {
    let path = ctx.out(PROFILE_JSON);
    require(&path, "run `skill-loom profile` first")?;
    let named: std::collections::BTreeMap<String, skill_loom_core::profiler::NamedLeafStats> =
        serde_json::from_str(&std::fs::read_to_string(&path)?)?;
    let mut by_name = std::collections::HashMap::new();
    for leaf in tree.leaves() {
        by_name.insert(tree.name(leaf)?.to_string(), leaf);
    }
    let mut parts = Vec::new();
    for (name, stats) in named {
        let leaf = by_name.get(&name).ok_or_else(|| {
            StageError::Validation(format!(
                "profile leaf {name:?} is not a leaf of the configured taxonomy"
            ))
        })?;
        parts.push((
            *leaf,
            LeafStats {
                n_examples: stats.n,
                score_sum: stats.accuracy.unwrap_or(0.0) * stats.n as f64,
            },
        ));
    }
    Ok(SkillProfile::from_parts(tree, parts))
}

pub fn run_sample(ctx: &StageContext) -> Result<(), StageError> {
    let config = &ctx.config;
    let tree = ctx.tree()?;
    let corpus = ctx.filtered_corpus()?;
    let attributions = ctx.attributions()?;
    let profile = load_profile(ctx, &tree)?;
    let sampler_config = SamplerConfig {
        temperature: config.sampler_temperature,
        w_max: config.w_max,
        seed: config.seed,
        subset_size: config.subset_size,
    };
    let dist = skill_probabilities(&profile, &sampler_config)?;
    let plan = sample_subset(&corpus, &attributions, &dist, &sampler_config, &tree)?;
    let manifest = ctx
        .manifest("sample")
        .input("profile", &ctx.out(PROFILE_JSON))?
        .input("attributions", &ctx.out(ATTRIBUTIONS))?
        .input("filtered", &ctx.out(FILTERED))?;
    write_artifact(&ctx.out(PLAN), pretty(&plan)?.as_bytes(), manifest)?;
    println!(
        "sample: {} of {} problems selected over {} skills (T={}, seed={}) -> {}",
        plan.selected.len(),
        corpus.len(),
        plan.skill_probabilities.len(),
        sampler_config.temperature,
        sampler_config.seed,
        ctx.out(PLAN).display()
    );
    Ok(())
}

pub fn run_augment(ctx: &StageContext) -> Result<(), StageError> {
    let config = &ctx.config;
    let tree = ctx.tree()?;
    let corpus = ctx.filtered_corpus()?;
    let attributions = ctx.attributions()?;
    let plan_path = ctx.out(PLAN);
    require(&plan_path, "run `skill-loom sample` first")?;
    let plan: SamplingPlan = serde_json::from_str(&std::fs::read_to_string(&plan_path)?)?;
    let variant: AugmentVariant = config.variant.parse()?;
    let records = emit_sft_records(&plan, &corpus, &attributions, variant, &tree)?;
    let lines: Vec<SftLine> = records.iter().map(SftLine::from).collect();
    let manifest = ctx
        .manifest("augment")
        .input("plan", &plan_path)?
        .input("filtered", &ctx.out(FILTERED))?
        .input("attributions", &ctx.out(ATTRIBUTIONS))?;
    write_artifact(
        &ctx.out(SFT),
        jsonl::to_jsonl_string(&lines)?.as_bytes(),
        manifest,
    )?;
    println!(
        "augment: {} records ({}) -> {}",
        lines.len(),
        variant.as_str(),
        ctx.out(SFT).display()
    );
    Ok(())
}

pub fn run_evaluate(ctx: &StageContext) -> Result<(), StageError> {
    let config = &ctx.config;
    let benchmark_path = config.benchmark.as_ref().ok_or_else(|| {
        StageError::Validation("evaluate requires a `benchmark` path in the config".into())
    })?;
    require(benchmark_path, "benchmark file named in config")?;
    let questions = load_benchmark(BufReader::new(std::fs::File::open(benchmark_path)?))?;
    let client = ctx.client()?;
    let decoding = DecodingConfig {
        temperature: config.eval_temperature,
        top_p: config.eval_top_p,
        max_tokens: config.eval_max_tokens,
        k: config.eval_k,
    };
    let report = run_benchmark(
        &questions,
        &client,
        &config.student_model,
        &decoding,
        config.max_in_flight,
    )?;
    let manifest = || -> Result<Manifest, StageError> {
        ctx.manifest("evaluate").input("benchmark", benchmark_path)
    };
    write_artifact(
        &ctx.out(EVAL_JSON),
        pretty(&report)?.as_bytes(),
        manifest()?,
    )?;
    write_artifact(&ctx.out(EVAL_CSV), report.to_csv().as_bytes(), manifest()?)?;
    println!(
        "evaluate: {} questions, Avg@{} = {:.4} -> {}",
        report.per_question.len(),
        report.k,
        report.aggregate,
        ctx.out(EVAL_JSON).display()
    );
    Ok(())
}

pub fn run_simulate(ctx: &StageContext) -> Result<(), StageError> {
    let config = &ctx.config;
    let tree = if config.taxonomy.exists() {
        SkillTree::from_path(&config.taxonomy)?
    } else {
        canonical_tree()
    };
    let sim_config = SimConfig {
        tree,
        n_problems: config.sim_problems,
        chain_count_weights: vec![0.7, 0.3],
        rounds: config.sim_rounds,
        subset_size: config.sim_subset,
        eval_k: config.sim_eval_k,
        learning_rate: config.sim_learning_rate,
        mastery_range: (0.2, 0.95),
        policies: vec![
            SamplingPolicy::RandomUniform,
            SamplingPolicy::SkillBased {
                temperature: config.sim_temperature,
                w_max: config.w_max,
            },
        ],
        seeds: config.sim_seeds.clone(),
    };
    let report = run_closed_loop(&sim_config)?;
    let manifest = || ctx.manifest("simulate");
    write_artifact(
        &ctx.out(TRAJECTORY),
        report.trajectories_csv().as_bytes(),
        manifest(),
    )?;
    write_artifact(
        &ctx.out(SIM_SUMMARY),
        pretty(&report.summary)?.as_bytes(),
        manifest(),
    )?;
    for (policy, summary) in &report.summary {
        println!(
            "simulate: {policy}: final per-skill std {:.4}, mean accuracy {:.4}{}",
            summary.mean_final_std,
            summary.mean_final_accuracy,
            summary
                .win_rate
                .map(|w| format!(", win rate {:.0}%", w * 100.0))
                .unwrap_or_default()
        );
    }
    Ok(())
}

pub fn run_pipeline(ctx: &StageContext) -> Result<(), StageError> {
    run_filter(ctx)?;
    run_attribute(ctx)?;
    run_profile(ctx)?;
    run_sample(ctx)?;
    run_augment(ctx)?;
    println!("pipeline: artifacts in {}", ctx.config.out_dir.display());
    Ok(())
}

fn pretty<T: Serialize>(value: &T) -> Result<String, StageError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}
