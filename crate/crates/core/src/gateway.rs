//! Chat-completion access: an HTTP endpoint, a scripted oracle for tests, a
//! response cache and the per-run usage ledger.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAIN_TEMPERATURE: f64 = 0.0;
pub const SAMPLING_TEMPERATURE: f64 = 0.4;
pub const DEFAULT_MAX_TOKENS: u32 = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    /// All message contents joined by blank lines; what scripted matchers see.
    pub fn transcript(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
    pub endpoint: String,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("authentication rejected by {0}")]
    Auth(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("unexpected response: {0}")]
    Protocol(String),
    #[error("unscripted request: {}", .0.transcript())]
    Unscripted(Box<ChatRequest>),
    #[error("scripted rule {0} has no replies left")]
    Exhausted(usize),
    #[error("cache: {0}")]
    Cache(String),
    #[error("endpoint configuration: {0}")]
    Config(String),
}

pub trait Endpoint: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
    fn tag(&self) -> &str;
}

impl<E: Endpoint + ?Sized> Endpoint for Box<E> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        (**self).complete(request)
    }

    fn tag(&self) -> &str {
        (**self).tag()
    }
}

/// Stable hex digest over (model, messages, temperature, max tokens, seed).
pub fn cache_key(request: &ChatRequest) -> String {
    let canonical = serde_json::to_vec(request).expect("requests serialize");
    hex::encode(Sha256::digest(canonical))
}

fn word_count(s: &str) -> u64 {
    s.split_whitespace().count() as u64
}

// ---------------------------------------------------------------- scripted

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    Always,
    Contains(String),
    Regex(String),
    All(Vec<Matcher>),
    Any(Vec<Matcher>),
    Not(Box<Matcher>),
}

impl Matcher {
    fn compile(&self) -> Result<Compiled, GatewayError> {
        Ok(match self {
            Matcher::Always => Compiled::Always,
            Matcher::Contains(s) => Compiled::Contains(s.clone()),
            Matcher::Regex(r) => {
                Compiled::Regex(Regex::new(r).map_err(|e| GatewayError::Config(e.to_string()))?)
            }
            Matcher::All(ms) => {
                Compiled::All(ms.iter().map(Matcher::compile).collect::<Result<_, _>>()?)
            }
            Matcher::Any(ms) => {
                Compiled::Any(ms.iter().map(Matcher::compile).collect::<Result<_, _>>()?)
            }
            Matcher::Not(m) => Compiled::Not(Box::new(m.compile()?)),
        })
    }
}

enum Compiled {
    Always,
    Contains(String),
    Regex(Regex),
    All(Vec<Compiled>),
    Any(Vec<Compiled>),
    Not(Box<Compiled>),
}

impl Compiled {
    fn matches(&self, text: &str) -> bool {
        match self {
            Compiled::Always => true,
            Compiled::Contains(s) => text.contains(s.as_str()),
            Compiled::Regex(r) => r.is_match(text),
            Compiled::All(ms) => ms.iter().all(|m| m.matches(text)),
            Compiled::Any(ms) => ms.iter().any(|m| m.matches(text)),
            Compiled::Not(m) => !m.matches(text),
        }
    }
}

pub type ReplyFn = Arc<dyn Fn(&ChatRequest) -> String + Send + Sync>;

#[derive(Clone)]
pub enum Reply {
    /// Returned on every match.
    Repeat(String),
    /// Each entry answers once, in order.
    Sequence(Vec<String>),
    /// Computed from the request; keeps concurrent runs reproducible.
    Func(ReplyFn),
}

impl fmt::Debug for Reply {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reply::Repeat(s) => f.debug_tuple("Repeat").field(s).finish(),
            Reply::Sequence(s) => f.debug_tuple("Sequence").field(s).finish(),
            Reply::Func(_) => f.write_str("Func(..)"),
        }
    }
}

/// Serializable transcript rule (`Func` replies are code-only).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptRule {
    #[serde(rename = "match")]
    pub matcher: Matcher,
    #[serde(default)]
    pub reply: Option<String>,
    #[serde(default)]
    pub replies: Option<Vec<String>>,
}

struct Rule {
    matcher: Compiled,
    reply: Reply,
    cursor: Mutex<usize>,
}

/// Deterministic test double: the first rule whose matcher accepts the
/// request transcript answers it.
pub struct ScriptedEndpoint {
    rules: Vec<Rule>,
    tag: String,
    calls: AtomicU64,
}

impl ScriptedEndpoint {
    pub fn new(rules: Vec<(Matcher, Reply)>) -> Result<Self, GatewayError> {
        if rules.is_empty() {
            return Err(GatewayError::Config("empty transcript".into()));
        }
        let rules = rules
            .into_iter()
            .map(|(m, reply)| {
                Ok(Rule {
                    matcher: m.compile()?,
                    reply,
                    cursor: Mutex::new(0),
                })
            })
            .collect::<Result<_, GatewayError>>()?;
        Ok(ScriptedEndpoint {
            rules,
            tag: "scripted".into(),
            calls: AtomicU64::new(0),
        })
    }

    pub fn from_transcript(rules: Vec<TranscriptRule>) -> Result<Self, GatewayError> {
        let rules = rules
            .into_iter()
            .map(|r| {
                let reply = match (r.reply, r.replies) {
                    (Some(s), None) => Reply::Repeat(s),
                    (None, Some(v)) => Reply::Sequence(v),
                    _ => {
                        return Err(GatewayError::Config(
                            "each rule needs exactly one of `reply` or `replies`".into(),
                        ))
                    }
                };
                Ok((r.matcher, reply))
            })
            .collect::<Result<Vec<_>, _>>()?;
        ScriptedEndpoint::new(rules)
    }

    pub fn from_path(path: &Path) -> Result<Self, GatewayError> {
        let text = fs::read_to_string(path)
            .map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        let rules: Vec<TranscriptRule> =
            serde_json::from_str(&text).map_err(|e| GatewayError::Config(e.to_string()))?;
        ScriptedEndpoint::from_transcript(rules)
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Endpoint for ScriptedEndpoint {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let text = request.transcript();
        let (idx, rule) = self
            .rules
            .iter()
            .enumerate()
            .find(|(_, r)| r.matcher.matches(&text))
            .ok_or_else(|| GatewayError::Unscripted(Box::new(request.clone())))?;
        let reply = match &rule.reply {
            Reply::Repeat(s) => s.clone(),
            Reply::Func(f) => f(request),
            Reply::Sequence(v) => {
                let mut cur = rule.cursor.lock().expect("cursor lock");
                let s = v.get(*cur).cloned().ok_or(GatewayError::Exhausted(idx))?;
                *cur += 1;
                s
            }
        };
        Ok(ChatResponse {
            prompt_tokens: word_count(&text),
            completion_tokens: word_count(&reply),
            text: reply,
            latency_ms: 0,
            endpoint: self.tag.clone(),
        })
    }

    fn tag(&self) -> &str {
        &self.tag
    }
}

// ------------------------------------------------------------------- cache

/// Directory of `<cache_key>.json` response files in front of another
/// endpoint.
pub struct CachedEndpoint<E> {
    inner: E,
    dir: PathBuf,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl<E: Endpoint> CachedEndpoint<E> {
    pub fn new(inner: E, dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| GatewayError::Cache(e.to_string()))?;
        Ok(CachedEndpoint {
            inner,
            dir,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }
}

impl<E: Endpoint> Endpoint for CachedEndpoint<E> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let key = cache_key(request);
        let path = self.dir.join(format!("{key}.json"));
        if let Ok(bytes) = fs::read(&path) {
            let resp = serde_json::from_slice(&bytes)
                .map_err(|e| GatewayError::Cache(format!("{}: {e}", path.display())))?;
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(resp);
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let resp = self.inner.complete(request)?;
        let tmp = self.dir.join(format!(
            "{key}.{}.{:?}.tmp",
            std::process::id(),
            std::thread::current().id()
        ));
        let body = serde_json::to_vec_pretty(&resp).expect("responses serialize");
        fs::write(&tmp, body)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|e| GatewayError::Cache(e.to_string()))?;
        Ok(resp)
    }

    fn tag(&self) -> &str {
        self.inner.tag()
    }
}

// -------------------------------------------------------------------- http

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            backoff_ms: 500,
        }
    }
}

/// Endpoint table entry. The credential is named by environment variable,
/// never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout")]
    pub timeout_s: u64,
}

fn default_parallelism() -> usize {
    4
}

fn default_timeout() -> u64 {
    120
}

struct Limiter {
    slots: Mutex<usize>,
    cv: Condvar,
}

impl Limiter {
    fn acquire(&self) -> LimiterGuard<'_> {
        let mut free = self.slots.lock().expect("limiter lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("limiter wait");
        }
        *free -= 1;
        LimiterGuard(self)
    }
}

struct LimiterGuard<'a>(&'a Limiter);

impl Drop for LimiterGuard<'_> {
    fn drop(&mut self) {
        *self.0.slots.lock().expect("limiter lock") += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(alias = "input_tokens", default)]
    prompt_tokens: u64,
    #[serde(alias = "output_tokens", default)]
    completion_tokens: u64,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

/// Chat-completions JSON over HTTP(S).
pub struct HttpEndpoint {
    name: String,
    config: HttpConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    limiter: Limiter,
}

impl HttpEndpoint {
    pub fn new(name: &str, config: HttpConfig) -> Result<Self, GatewayError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                GatewayError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        if config.parallelism == 0 {
            return Err(GatewayError::Config(
                "parallelism must be at least 1".into(),
            ));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_s)))
            .build()
            .into();
        Ok(HttpEndpoint {
            name: name.to_string(),
            limiter: Limiter {
                slots: Mutex::new(config.parallelism),
                cv: Condvar::new(),
            },
            config,
            api_key,
            agent,
        })
    }

    fn body(&self, request: &ChatRequest) -> serde_json::Value {
        let mut body = serde_json::json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        if let Some(seed) = request.seed {
            body["seed"] = seed.into();
        }
        body
    }

    fn attempt(&self, request: &ChatRequest) -> Result<(u16, String), String> {
        let url = format!(
            "{}/chat/completions",
            self.config.base_url.trim_end_matches('/')
        );
        let mut req = self
            .agent
            .post(&url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(self.body(request))
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| e.to_string())?;
        Ok((status, text))
    }
}

impl Endpoint for HttpEndpoint {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let _slot = self.limiter.acquire();
        let attempts = self.config.retry.max_retries + 1;
        let mut last_err = String::new();
        let mut rate_limited = false;
        for attempt in 0..attempts {
            if attempt > 0 {
                let wait = self
                    .config
                    .retry
                    .backoff_ms
                    .saturating_mul(1 << (attempt - 1).min(6));
                std::thread::sleep(Duration::from_millis(wait));
            }
            let start = Instant::now();
            match self.attempt(request) {
                Ok((200..=299, body)) => {
                    let wire: WireResponse = serde_json::from_str(&body)
                        .map_err(|e| GatewayError::Protocol(e.to_string()))?;
                    let text = wire
                        .choices
                        .into_iter()
                        .next()
                        .ok_or_else(|| GatewayError::Protocol("no choices".into()))?
                        .message
                        .content
                        .unwrap_or_default();
                    let usage = wire.usage.unwrap_or(WireUsage {
                        prompt_tokens: 0,
                        completion_tokens: 0,
                    });
                    return Ok(ChatResponse {
                        text,
                        prompt_tokens: usage.prompt_tokens,
                        completion_tokens: usage.completion_tokens,
                        latency_ms: start.elapsed().as_millis() as u64,
                        endpoint: self.name.clone(),
                    });
                }
                Ok((401 | 403, _)) => return Err(GatewayError::Auth(self.name.clone())),
                Ok((429, _)) => {
                    rate_limited = true;
                    tracing::warn!(endpoint = %self.name, attempt, "rate limited");
                }
                Ok((status @ 500..=599, _)) => {
                    rate_limited = false;
                    last_err = format!("http status {status}");
                    tracing::warn!(endpoint = %self.name, attempt, status, "server error");
                }
                Ok((status, body)) => {
                    return Err(GatewayError::Protocol(format!(
                        "http status {status}: {body}"
                    )))
                }
                Err(e) => {
                    rate_limited = false;
                    tracing::warn!(endpoint = %self.name, attempt, error = %e, "transport error");
                    last_err = e;
                }
            }
        }
        if rate_limited {
            Err(GatewayError::RateLimited { attempts })
        } else {
            Err(GatewayError::Transport {
                attempts,
                message: last_err,
            })
        }
    }

    fn tag(&self) -> &str {
        &self.name
    }
}

// ------------------------------------------------------------------ ledger

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub call_index: u32,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub label: String,
    #[serde(default)]
    pub retry: bool,
}

/// Append-only per-run token ledger.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageLedger {
    entries: Vec<LedgerEntry>,
}

impl UsageLedger {
    pub fn record(&mut self, response: &ChatResponse, label: &str, retry: bool) {
        self.entries.push(LedgerEntry {
            call_index: self.entries.len() as u32,
            prompt_tokens: response.prompt_tokens,
            completion_tokens: response.completion_tokens,
            label: label.to_string(),
            retry,
        });
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn prompt_tokens(&self) -> u64 {
        self.entries.iter().map(|e| e.prompt_tokens).sum()
    }

    pub fn completion_tokens(&self) -> u64 {
        self.entries.iter().map(|e| e.completion_tokens).sum()
    }

    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens() + self.completion_tokens()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    fn req(text: &str, temperature: f64) -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            messages: vec![Message::user(text)],
            temperature,
            max_output_tokens: 64,
            seed: None,
        }
    }

    #[test]
    fn cache_key_properties() {
        assert_eq!(cache_key(&req("a", 0.0)), cache_key(&req("a", 0.0)));
        assert_ne!(cache_key(&req("a", 0.0)), cache_key(&req("a", 0.4)));
        let mut r1 = req("a", 0.0);
        r1.messages.push(Message::assistant("b"));
        let mut r2 = req("b", 0.0);
        r2.messages[0].role = Role::Assistant;
        r2.messages.push(Message::user("a"));
        assert_ne!(cache_key(&r1), cache_key(&r2));
        let mut r3 = req("a", 0.0);
        r3.seed = Some(1);
        assert_ne!(cache_key(&req("a", 0.0)), cache_key(&r3));
    }

    #[test]
    fn scripted_first_match_wins() {
        let ep = ScriptedEndpoint::new(vec![
            (
                Matcher::Contains("Wordset1".into()),
                Reply::Repeat(r#"{"answer": "electron"}"#.into()),
            ),
            (Matcher::Always, Reply::Repeat("fallback".into())),
        ])
        .unwrap();
        assert_eq!(
            ep.complete(&req("Wordset1: x", 0.0)).unwrap().text,
            r#"{"answer": "electron"}"#
        );
        assert_eq!(ep.complete(&req("other", 0.0)).unwrap().text, "fallback");
    }

    #[test]
    fn scripted_sequence_and_exhaustion() {
        let ep = ScriptedEndpoint::new(vec![(
            Matcher::Regex("^q".into()),
            Reply::Sequence(vec!["one".into(), "two".into()]),
        )])
        .unwrap();
        assert_eq!(ep.complete(&req("q", 0.0)).unwrap().text, "one");
        assert_eq!(ep.complete(&req("q", 0.0)).unwrap().text, "two");
        assert!(matches!(
            ep.complete(&req("q", 0.0)),
            Err(GatewayError::Exhausted(0))
        ));
        match ep.complete(&req("zzz", 0.0)) {
            Err(GatewayError::Unscripted(r)) => assert_eq!(r.transcript(), "zzz"),
            other => panic!("{other:?}"),
        }
        assert!(ScriptedEndpoint::new(vec![]).is_err());
    }

    #[test]
    fn scripted_concurrent_callers_match_serial_replay() {
        let mk = || {
            ScriptedEndpoint::new(vec![(
                Matcher::Always,
                Reply::Func(Arc::new(|r: &ChatRequest| {
                    format!("echo {}", r.transcript())
                })),
            )])
            .unwrap()
        };
        let inputs: Vec<String> = (0..64).map(|i| format!("prompt {i}")).collect();
        let serial_ep = mk();
        let serial: Vec<String> = inputs
            .iter()
            .map(|p| serial_ep.complete(&req(p, 0.0)).unwrap().text)
            .collect();
        let ep = mk();
        let parallel: Vec<String> = std::thread::scope(|s| {
            let handles: Vec<_> = inputs
                .iter()
                .map(|p| {
                    let ep = &ep;
                    s.spawn(move || ep.complete(&req(p, 0.0)).unwrap().text)
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        assert_eq!(serial, parallel);
    }

    #[test]
    fn transcript_file_rules() {
        let rules: Vec<TranscriptRule> = serde_json::from_str(
            r#"[{"match": {"all": [{"contains": "a"}, {"not": {"contains": "b"}}]}, "reply": "x"},
                {"match": "always", "replies": ["y"]}]"#,
        )
        .unwrap();
        let ep = ScriptedEndpoint::from_transcript(rules).unwrap();
        assert_eq!(ep.complete(&req("a", 0.0)).unwrap().text, "x");
        assert_eq!(ep.complete(&req("ab", 0.0)).unwrap().text, "y");
    }

    #[test]
    fn cache_hits_skip_the_inner_endpoint() {
        let dir = tempfile::tempdir().unwrap();
        let inner = ScriptedEndpoint::new(vec![(
            Matcher::Always,
            Reply::Sequence(vec!["first".into(), "second".into()]),
        )])
        .unwrap();
        let ep = CachedEndpoint::new(inner, dir.path()).unwrap();
        let a = ep.complete(&req("p", 0.0)).unwrap();
        let b = ep.complete(&req("p", 0.0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ep.inner().calls(), 1);
        assert_eq!((ep.hits(), ep.misses()), (1, 1));
        assert_eq!(ep.complete(&req("p", 0.4)).unwrap().text, "second");
    }

    #[test]
    fn ledger_totals_are_sums() {
        let mut l = UsageLedger::default();
        for (p, c) in [(10, 3), (7, 9)] {
            let r = ChatResponse {
                text: String::new(),
                prompt_tokens: p,
                completion_tokens: c,
                latency_ms: 0,
                endpoint: "t".into(),
            };
            l.record(&r, "x", false);
        }
        assert_eq!(l.len(), 2);
        assert_eq!(l.entries()[1].call_index, 1);
        assert_eq!(l.prompt_tokens(), 17);
        assert_eq!(l.completion_tokens(), 12);
        assert_eq!(l.total_tokens(), 29);
    }

    /// Serves `responses` in order, one per connection, then stops.
    fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (addr, handle)
    }

    fn http(base_url: String, retries: u32) -> HttpEndpoint {
        HttpEndpoint::new(
            "test",
            HttpConfig {
                base_url,
                model: "m".into(),
                api_key_env: None,
                parallelism: 2,
                retry: RetryPolicy {
                    max_retries: retries,
                    backoff_ms: 1,
                },
                timeout_s: 5,
            },
        )
        .unwrap()
    }

    #[test]
    fn http_success_parses_usage() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"{\"answer\":\"B\"}"}}],
                     "usage":{"prompt_tokens":12,"completion_tokens":5}}"#;
        let (url, h) = serve(vec![(500, "{}".into()), (200, ok.into())]);
        let mut r = req("hello", 0.0);
        r.seed = Some(9);
        let resp = http(url, 1).complete(&r).unwrap();
        assert_eq!(resp.text, r#"{"answer":"B"}"#);
        assert_eq!((resp.prompt_tokens, resp.completion_tokens), (12, 5));
        let bodies = h.join().unwrap();
        let sent: serde_json::Value = serde_json::from_str(&bodies[1]).unwrap();
        assert_eq!(sent["seed"], 9);
        assert_eq!(sent["messages"][0]["role"], "user");
    }

    #[test]
    fn http_error_categories() {
        let (url, h) = serve(vec![(401, "{}".into())]);
        assert!(matches!(
            http(url, 3).complete(&req("x", 0.0)),
            Err(GatewayError::Auth(_))
        ));
        h.join().unwrap();

        let (url, h) = serve(vec![(429, "{}".into()), (429, "{}".into())]);
        assert!(matches!(
            http(url, 1).complete(&req("x", 0.0)),
            Err(GatewayError::RateLimited { attempts: 2 })
        ));
        h.join().unwrap();

        let dead = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", dead.local_addr().unwrap());
        drop(dead);
        assert!(matches!(
            http(url, 2).complete(&req("x", 0.0)),
            Err(GatewayError::Transport { attempts: 3, .. })
        ));
    }

    #[test]
    fn missing_credential_env_is_a_config_error() {
        let cfg = HttpConfig {
            base_url: "http://localhost".into(),
            model: "m".into(),
            api_key_env: Some("ANALOGICA_TEST_KEY_THAT_IS_NOT_SET".into()),
            parallelism: 1,
            retry: RetryPolicy::default(),
            timeout_s: 1,
        };
        assert!(matches!(
            HttpEndpoint::new("x", cfg),
            Err(GatewayError::Config(_))
        ));
    }
}
