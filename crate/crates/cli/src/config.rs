//! Flat key-value pipeline configuration.
//!
//! One TOML document holds every knob; CLI flags override individual keys
//! and the API credential comes only from the environment. Relative paths
//! resolve against the config file's directory, so a config travels with
//! its fixtures.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::StageError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    // Endpoint.
    /// OpenAI-compatible API root, e.g. "https://host:8000/v1".
    pub base_url: String,
    /// "http" or "scripted".
    pub transport: String,
    /// Script file for the scripted transport.
    pub script: Option<PathBuf>,
    /// Model name used for skill attribution.
    pub labeler_model: String,
    /// Model name profiled and evaluated.
    pub student_model: String,
    pub max_in_flight: usize,
    pub retry_attempts: u32,
    pub retry_base_delay_ms: u64,
    pub request_timeout_secs: u64,

    // Files.
    pub taxonomy: PathBuf,
    pub corpus: PathBuf,
    /// Response cache; defaults to `<out_dir>/cache.jsonl`.
    pub cache: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Benchmark questions; enables the leakage check and `evaluate`.
    pub benchmark: Option<PathBuf>,
    /// Precomputed per-problem results; skips student inference in `profile`.
    pub results: Option<PathBuf>,

    // Filtering.
    pub teacher_tag: String,
    pub max_malformed_fraction: f64,
    pub attribution_failure_threshold: f64,
    /// Uniform downsample after filtering; absent disables.
    pub downsample_target: Option<usize>,

    // Labeling decode.
    pub label_temperature: f64,
    pub label_max_tokens: u32,
    pub parse_retries: u32,
    pub progress_every: usize,

    // Sampling.
    pub sampler_temperature: f64,
    pub w_max: f64,
    pub seed: u64,
    pub subset_size: usize,

    // Student decoding.
    pub eval_temperature: f64,
    pub eval_top_p: f64,
    pub eval_max_tokens: u32,
    pub eval_k: u32,
    /// Samples per corpus problem when profiling.
    pub profile_k: u32,

    // Augmentation.
    /// full_chain | root_only | leaf_only | none.
    pub variant: String,

    // Simulator.
    pub sim_problems: usize,
    pub sim_rounds: usize,
    pub sim_subset: usize,
    pub sim_eval_k: usize,
    pub sim_learning_rate: f64,
    pub sim_temperature: f64,
    pub sim_seeds: Vec<u64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            transport: "http".into(),
            script: None,
            labeler_model: "Qwen2.5-32B-Instruct".into(),
            student_model: "Qwen3-4B".into(),
            max_in_flight: 4,
            retry_attempts: 3,
            retry_base_delay_ms: 500,
            request_timeout_secs: 600,
            taxonomy: "taxonomy.json".into(),
            corpus: "corpus.jsonl".into(),
            cache: None,
            out_dir: "out".into(),
            benchmark: None,
            results: None,
            teacher_tag: "deepseek-r1".into(),
            max_malformed_fraction: 0.01,
            attribution_failure_threshold: 0.01,
            downsample_target: None,
            label_temperature: 0.0,
            label_max_tokens: 512,
            parse_retries: 2,
            progress_every: 100,
            sampler_temperature: 1.0,
            w_max: 10_000.0,
            seed: 17,
            subset_size: 1000,
            eval_temperature: 0.6,
            eval_top_p: 0.95,
            eval_max_tokens: 16384,
            eval_k: 8,
            profile_k: 1,
            variant: "full_chain".into(),
            sim_problems: 600,
            sim_rounds: 15,
            sim_subset: 30,
            sim_eval_k: 4,
            sim_learning_rate: 0.05,
            sim_temperature: 1.0,
            sim_seeds: (0..20).collect(),
        }
    }
}

/// Flag-level overrides applied on top of the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub max_in_flight: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, StageError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            StageError::Validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut config: PipelineConfig = toml::from_str(&text)
            .map_err(|e| StageError::Validation(format!("bad config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(max_in_flight) = overrides.max_in_flight {
            config.max_in_flight = max_in_flight;
        }
        if let Some(out_dir) = &overrides.out_dir {
            config.out_dir = out_dir.clone();
        }
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut self.taxonomy);
        resolve(&mut self.corpus);
        resolve(&mut self.out_dir);
        if let Some(p) = &mut self.cache {
            resolve(p);
        }
        if let Some(p) = &mut self.script {
            resolve(p);
        }
        if let Some(p) = &mut self.benchmark {
            resolve(p);
        }
        if let Some(p) = &mut self.results {
            resolve(p);
        }
    }

    pub fn validate(&self) -> Result<(), StageError> {
        if self.transport != "http" && self.transport != "scripted" {
            return Err(StageError::Validation(format!(
                "transport must be \"http\" or \"scripted\", got {:?}",
                self.transport
            )));
        }
        if self.transport == "scripted" && self.script.is_none() {
            return Err(StageError::Validation(
                "transport = \"scripted\" requires a script path".into(),
            ));
        }
        if self.max_in_flight == 0 {
            return Err(StageError::Validation(
                "max_in_flight must be at least 1".into(),
            ));
        }
        if !self.sampler_temperature.is_finite() || self.sampler_temperature <= 0.0 {
            return Err(StageError::Validation(
                "sampler_temperature must be positive".into(),
            ));
        }
        if !self.w_max.is_finite() || self.w_max <= 0.0 {
            return Err(StageError::Validation("w_max must be positive".into()));
        }
        if self.profile_k == 0 || self.eval_k == 0 {
            return Err(StageError::Validation(
                "profile_k and eval_k must be at least 1".into(),
            ));
        }
        self.variant
            .parse::<skill_loom_core::AugmentVariant>()
            .map_err(|e| StageError::Validation(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.max_malformed_fraction) {
            return Err(StageError::Validation(
                "max_malformed_fraction must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn cache_path(&self) -> PathBuf {
        self.cache
            .clone()
            .unwrap_or_else(|| self.out_dir.join("cache.jsonl"))
    }

    /// Digest of the effective configuration, recorded in every manifest.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(&canonical);
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }
}
