//! Deterministic scripted transport.
//!
//! Rules map request patterns to canned replies: a rule matches when every
//! `contains` substring occurs in the request's last user message. The first
//! matching rule wins. This drives all attribution and evaluation tests and
//! doubles as an offline endpoint for pipeline dry runs (`transport =
//! "scripted"` in the CLI config).

use std::io::BufRead;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{ChatRequest, ChatResponse, FinishReason, TokenUsage, Transport, TransportError};
use crate::error::{Error, Result};

/// One pattern → reply entry of a script.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptRule {
    /// Substrings that must all occur in the last user message.
    pub contains: Vec<String>,
    /// Reply content returned on match.
    pub reply: String,
}

impl ScriptRule {
    pub fn new(contains: &[&str], reply: &str) -> Self {
        Self {
            contains: contains.iter().map(|s| s.to_string()).collect(),
            reply: reply.to_string(),
        }
    }
}

pub struct ScriptedTransport {
    rules: Vec<ScriptRule>,
    calls: AtomicU64,
}

impl ScriptedTransport {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        Self {
            rules,
            calls: AtomicU64::new(0),
        }
    }

    /// Load a script from a JSON Lines file of [`ScriptRule`] entries.
    pub fn from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Chat(format!("cannot open script {}: {e}", path.display())))?;
        let mut rules = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rule: ScriptRule = serde_json::from_str(&line)
                .map_err(|e| Error::Chat(format!("bad script rule at line {}: {e}", i + 1)))?;
            rules.push(rule);
        }
        Ok(Self::new(rules))
    }

    /// Number of sends handled so far.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Transport for ScriptedTransport {
    fn send(&self, req: &ChatRequest) -> std::result::Result<ChatResponse, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let haystack = req.last_user_content().unwrap_or_default();
        for rule in &self.rules {
            if rule.contains.iter().all(|s| haystack.contains(s.as_str())) {
                return Ok(ChatResponse {
                    content: rule.reply.clone(),
                    finish_reason: FinishReason::Stop,
                    usage: TokenUsage::default(),
                });
            }
        }
        let head: String = haystack.chars().take(120).collect();
        Err(TransportError::fatal(format!(
            "no scripted rule matched request starting {head:?}"
        )))
    }
}
