//! Chat-completion client with content-addressed caching, retries, and
//! bounded concurrency.
//!
//! Every logical request carries a `sample_index` so that k independent
//! samples of the same prompt are cached as k distinct entries. Given a warm
//! cache, re-running any pipeline stage performs zero network calls.

pub mod http;
pub mod scripted;

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use http::HttpTransport;
pub use scripted::{ScriptRule, ScriptedTransport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }
}

/// A logical completion request. `sample_index` takes no part in the wire
/// body; it only distinguishes cache entries for repeated samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub sample_index: u32,
}

impl ChatRequest {
    /// Stable content digest of all fields, identical across process runs
    /// for identical logical requests.
    pub fn request_key(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("request serializes");
        let mut hasher = Sha256::new();
        hasher.update(&canonical);
        hex_string(&hasher.finalize())
    }

    /// Content of the last user message, if any. Scripted transports match
    /// rules against this text.
    pub fn last_user_content(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: FinishReason,
    #[serde(default)]
    pub usage: TokenUsage,
}

/// Error surfaced by a [`Transport`]; `retryable` drives the backoff loop.
#[derive(Debug, Clone)]
pub struct TransportError {
    pub message: String,
    pub retryable: bool,
}

impl TransportError {
    pub fn retryable(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            retryable: true,
        }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
            retryable: false,
        }
    }
}

/// One round trip to a completion endpoint (or a stand-in for one).
pub trait Transport: Send + Sync {
    fn send(&self, req: &ChatRequest) -> std::result::Result<ChatResponse, TransportError>;
}

/// Closure-backed transport, handy for tests.
pub struct FnTransport<F>(pub F);

impl<F> Transport for FnTransport<F>
where
    F: Fn(&ChatRequest) -> std::result::Result<ChatResponse, TransportError> + Send + Sync,
{
    fn send(&self, req: &ChatRequest) -> std::result::Result<ChatResponse, TransportError> {
        (self.0)(req)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    request_key: String,
    response: ChatResponse,
}

/// Append-only response cache, content-addressed by request key. All writes
/// go through a single serialized writer; entries are immutable once stored.
pub struct ResponseCache {
    entries: RwLock<HashMap<String, ChatResponse>>,
    writer: Option<Mutex<BufWriter<File>>>,
}

impl ResponseCache {
    /// Open (or create) a persistent cache file and load existing entries.
    /// A torn final line (interrupted append) is skipped with a warning;
    /// corruption anywhere else is an error.
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
            let last = lines.len();
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheLine>(line) {
                    Ok(entry) => {
                        entries.insert(entry.request_key, entry.response);
                    }
                    Err(e) if i + 1 == last => {
                        tracing::warn!("skipping torn final cache line: {e}");
                    }
                    Err(e) => {
                        return Err(Error::Chat(format!(
                            "corrupt cache line {} in {}: {e}",
                            i + 1,
                            path.display()
                        )));
                    }
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            entries: RwLock::new(entries),
            writer: Some(Mutex::new(BufWriter::new(file))),
        })
    }

    /// Purely in-memory cache (tests, simulator).
    pub fn in_memory() -> Self {
        Self {
            entries: RwLock::new(HashMap::new()),
            writer: None,
        }
    }

    pub fn get(&self, key: &str) -> Option<ChatResponse> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn put(&self, key: &str, response: &ChatResponse) -> Result<()> {
        {
            let mut entries = self.entries.write().expect("cache lock");
            if entries.contains_key(key) {
                return Ok(());
            }
            entries.insert(key.to_string(), response.clone());
        }
        if let Some(writer) = &self.writer {
            let line = serde_json::to_string(&CacheLine {
                request_key: key.to_string(),
                response: response.clone(),
            })?;
            let mut w = writer.lock().expect("cache writer lock");
            writeln!(w, "{line}")?;
            w.flush()?;
        }
        Ok(())
    }
}

/// Exponential backoff policy for transient transport failures.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(10),
        }
    }
}

impl RetryPolicy {
    /// Policy with no sleeping between attempts (tests).
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
        }
    }

    fn delay(&self, attempt: u32) -> Duration {
        let scaled = self
            .base_delay
            .saturating_mul(2u32.saturating_pow(attempt.saturating_sub(1)));
        scaled.min(self.max_delay)
    }
}

#[derive(Debug, Default)]
struct ClientStats {
    network_calls: AtomicU64,
    cache_hits: AtomicU64,
    in_flight: AtomicU64,
    peak_in_flight: AtomicU64,
}

/// Cached, retrying client over any [`Transport`]. Safe for concurrent
/// callers.
pub struct ChatClient {
    transport: Box<dyn Transport>,
    cache: ResponseCache,
    retry: RetryPolicy,
    stats: ClientStats,
}

impl ChatClient {
    pub fn new(transport: Box<dyn Transport>, cache: ResponseCache, retry: RetryPolicy) -> Self {
        Self {
            transport,
            cache,
            retry,
            stats: ClientStats::default(),
        }
    }

    /// Total transport round trips attempted (retries included).
    pub fn network_calls(&self) -> u64 {
        self.stats.network_calls.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> u64 {
        self.stats.cache_hits.load(Ordering::SeqCst)
    }

    /// Highest number of simultaneously outstanding transport calls observed.
    pub fn peak_in_flight(&self) -> u64 {
        self.stats.peak_in_flight.load(Ordering::SeqCst)
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    /// Complete one request, consulting the cache first. A cache hit incurs
    /// zero network activity.
    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse> {
        let key = req.request_key();
        if let Some(hit) = self.cache.get(&key) {
            self.stats.cache_hits.fetch_add(1, Ordering::SeqCst);
            return Ok(hit);
        }
        let response = self.send_with_retries(req)?;
        self.cache.put(&key, &response)?;
        Ok(response)
    }

    fn send_with_retries(&self, req: &ChatRequest) -> Result<ChatResponse> {
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            self.stats.network_calls.fetch_add(1, Ordering::SeqCst);
            let active = self.stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            self.stats
                .peak_in_flight
                .fetch_max(active, Ordering::SeqCst);
            let outcome = self.transport.send(req);
            self.stats.in_flight.fetch_sub(1, Ordering::SeqCst);
            match outcome {
                Ok(response) => return Ok(response),
                Err(e) if e.retryable && attempt < self.retry.max_attempts => {
                    let delay = self.retry.delay(attempt);
                    tracing::debug!(
                        "transient transport failure (attempt {attempt}): {}; retrying in {:?}",
                        e.message,
                        delay
                    );
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                }
                Err(e) => {
                    return Err(Error::Chat(format!(
                        "request failed after {attempt} attempt(s): {}",
                        e.message
                    )))
                }
            }
        }
    }

    /// Complete a batch with at most `max_in_flight` outstanding transport
    /// calls. Results are returned in request order; identical requests in
    /// one batch are sent once. On a hard failure, already-completed results
    /// stay flushed to the cache and the first failure (in request order)
    /// propagates.
    pub fn complete_many(
        &self,
        reqs: &[ChatRequest],
        max_in_flight: usize,
    ) -> Result<Vec<ChatResponse>> {
        if max_in_flight == 0 {
            return Err(Error::Chat("max_in_flight must be at least 1".into()));
        }
        if reqs.is_empty() {
            return Ok(Vec::new());
        }
        let keys: Vec<String> = reqs.iter().map(ChatRequest::request_key).collect();
        let mut by_key: HashMap<String, ChatResponse> = HashMap::new();
        // Distinct pending work in first-occurrence order.
        let mut pending: VecDeque<usize> = VecDeque::new();
        let mut queued: std::collections::HashSet<&str> = std::collections::HashSet::new();
        for (i, key) in keys.iter().enumerate() {
            if by_key.contains_key(key) || queued.contains(key.as_str()) {
                continue;
            }
            if let Some(hit) = self.cache.get(key) {
                self.stats.cache_hits.fetch_add(1, Ordering::SeqCst);
                by_key.insert(key.clone(), hit);
            } else {
                queued.insert(key);
                pending.push_back(i);
            }
        }
        if !pending.is_empty() {
            let workers = max_in_flight.min(pending.len());
            let queue = Mutex::new(pending);
            let done: Mutex<Vec<(usize, Result<ChatResponse>)>> = Mutex::new(Vec::new());
            let failed = std::sync::atomic::AtomicBool::new(false);
            std::thread::scope(|scope| {
                for _ in 0..workers {
                    scope.spawn(|| loop {
                        if failed.load(Ordering::SeqCst) {
                            return;
                        }
                        let job = queue.lock().expect("queue lock").pop_front();
                        let Some(idx) = job else { return };
                        let outcome = self.complete_uncached(&reqs[idx]);
                        if outcome.is_err() {
                            failed.store(true, Ordering::SeqCst);
                        }
                        done.lock().expect("done lock").push((idx, outcome));
                    });
                }
            });
            let mut done = done.into_inner().expect("done lock");
            done.sort_by_key(|(idx, _)| *idx);
            for (idx, outcome) in done {
                by_key.insert(keys[idx].clone(), outcome?);
            }
        }
        Ok(keys
            .iter()
            .map(|k| by_key.get(k).expect("all keys resolved").clone())
            .collect())
    }

    /// `complete` minus the cache read (the batch driver already did it).
    fn complete_uncached(&self, req: &ChatRequest) -> Result<ChatResponse> {
        let key = req.request_key();
        let response = self.send_with_retries(req)?;
        self.cache.put(&key, &response)?;
        Ok(response)
    }
}
