//! Crate-wide error type.

/// Errors produced by the curation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("taxonomy: {0}")]
    Taxonomy(String),
    #[error("corpus: {0}")]
    Corpus(String),
    #[error("chat: {0}")]
    Chat(String),
    #[error("attribution: {0}")]
    Attribution(String),
    /// A model reply that contains no parseable bracketed list of quoted
    /// strings. Kept distinct from [`Error::Attribution`] so the traversal
    /// can retry exactly this case.
    #[error("unparseable skill selection: {0}")]
    SelectionParse(String),
    #[error("profile: {0}")]
    Profile(String),
    #[error("sampling: {0}")]
    Sampling(String),
    #[error("augment: {0}")]
    Augment(String),
    #[error("eval: {0}")]
    Eval(String),
    #[error("sim: {0}")]
    Sim(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
