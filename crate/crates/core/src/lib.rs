//! Skill-centric distillation data curation.
//!
//! The pipeline attributes math QA examples to chains on a hierarchical
//! skill tree by recursive top-down prompting, profiles a student model's
//! per-skill accuracy, samples a training subset with probability inversely
//! proportional to those accuracies, and emits SFT records whose responses
//! open with the explicit skill chain. A synthetic-student simulator closes
//! the loop at desk scale to check that weakness-weighted selection flattens
//! the per-skill accuracy curve.

pub mod attribution;
pub mod augmenter;
pub mod chat;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod jsonl;
pub mod profiler;
pub mod sampler;
pub mod sim;
pub mod taxonomy;

pub use attribution::{AttributionFailure, AttributionOutcome, AttributionRecord};
pub use augmenter::{AugmentVariant, SftRecord};
pub use chat::{ChatClient, ChatMessage, ChatRequest, ChatResponse, ResponseCache, RetryPolicy};
pub use corpus::{FilteredCorpus, ProblemRecord, Provenance, TeacherResponse};
pub use error::{Error, Result};
pub use eval::{BenchmarkQuestion, BenchmarkReport, DecodingConfig};
pub use profiler::{ExampleResult, SkillProfile};
pub use sampler::{SamplerConfig, SamplingPlan, SkillDistribution};
pub use sim::{SimConfig, SimReport, SimStudent};
pub use taxonomy::{NodeId, SkillChain, SkillNode, SkillTree};
