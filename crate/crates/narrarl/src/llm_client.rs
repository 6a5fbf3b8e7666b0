//! Chat-completion transport for OpenAI-compatible endpoints, plus a scripted
//! stub for tests and offline runs.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use narrarl_core::Message;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable holding the bearer token.
pub const API_KEY_VAR: &str = "NARRARL_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatConfig {
    /// Base URL; requests go to `{endpoint}/chat/completions`.
    pub endpoint: String,
    pub model: String,
    #[serde(default = "defaults::temperature")]
    pub temperature: f64,
    #[serde(default = "defaults::timeout_s")]
    pub timeout_s: f64,
    #[serde(default = "defaults::max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "defaults::max_in_flight")]
    pub max_in_flight: usize,
    /// First retry delay; later delays double.
    #[serde(default = "defaults::backoff_base_ms")]
    pub backoff_base_ms: u64,
}

mod defaults {
    pub fn temperature() -> f64 {
        0.7
    }
    pub fn timeout_s() -> f64 {
        30.0
    }
    pub fn max_attempts() -> u32 {
        3
    }
    pub fn max_in_flight() -> usize {
        4
    }
    pub fn backoff_base_ms() -> u64 {
        1000
    }
}

impl ChatConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            temperature: defaults::temperature(),
            timeout_s: defaults::timeout_s(),
            max_attempts: defaults::max_attempts(),
            max_in_flight: defaults::max_in_flight(),
            backoff_base_ms: defaults::backoff_base_ms(),
        }
    }

    /// Returns the name of the first invalid field.
    pub fn validate(&self) -> Result<(), &'static str> {
        if self.endpoint.trim().is_empty() {
            return Err("endpoint");
        }
        if self.model.trim().is_empty() {
            return Err("model");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err("temperature");
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err("timeout_s");
        }
        if self.max_attempts == 0 {
            return Err("max_attempts");
        }
        if self.max_in_flight == 0 {
            return Err("max_in_flight");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChatError {
    #[error("no API key: set {API_KEY_VAR}")]
    AuthMissing,
    #[error("transport failed after {attempts} attempt(s): {last}")]
    TransportFailure { attempts: u32, last: String },
    #[error("HTTP {0}")]
    HttpError(u16),
    #[error("malformed response body: {0}")]
    MalformedBody(String),
    #[error("stub script exhausted after {0} call(s)")]
    ScriptExhausted(usize),
}

/// Anything that can answer a chat request.
pub trait ChatClient: Send + Sync {
    fn chat(&self, messages: &[Message]) -> Result<String, ChatError>;
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
pub struct InFlightGate {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

pub struct GatePermit<'a>(&'a InFlightGate);

impl InFlightGate {
    pub fn new(limit: usize) -> Self {
        assert!(limit >= 1);
        Self { limit, active: Mutex::new(0), freed: Condvar::new() }
    }

    pub fn acquire(&self) -> GatePermit<'_> {
        let mut active = self.active.lock().unwrap();
        while *active >= self.limit {
            active = self.freed.wait(active).unwrap();
        }
        *active += 1;
        GatePermit(self)
    }
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        *self.0.active.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

/// Delay before retry number `retry` (0-based): `base · 2^retry` plus up to
/// half of that again as jitter. Consecutive delays never decrease because
/// the largest jittered delay (1.5×) stays below the next base (2×).
pub fn backoff_delay(retry: u32, base: Duration, jitter: f64) -> Duration {
    let nominal = base.saturating_mul(1u32 << retry.min(20));
    nominal + nominal.mul_f64(jitter.clamp(0.0, 1.0) * 0.5)
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
}

/// The exact JSON body sent for `messages`.
pub fn request_body(config: &ChatConfig, messages: &[Message]) -> serde_json::Value {
    serde_json::to_value(WireRequest { model: &config.model, messages, temperature: config.temperature })
        .expect("request body serializes")
}

/// Pull `choices[0].message.content` out of a response body.
pub fn parse_response_body(body: &str) -> Result<String, ChatError> {
    let v: serde_json::Value = serde_json::from_str(body).map_err(|e| ChatError::MalformedBody(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_owned)
        .ok_or_else(|| ChatError::MalformedBody("missing choices[0].message.content".into()))
}

/// Text plus the number of HTTP attempts it took.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatOutcome {
    pub text: String,
    pub attempts: u32,
}

/// Blocking client for `POST {endpoint}/chat/completions`.
pub struct HttpChatClient {
    config: ChatConfig,
    api_key: String,
    agent: ureq::Agent,
    gate: InFlightGate,
}

impl HttpChatClient {
    pub fn new(config: ChatConfig, api_key: impl Into<String>) -> Self {
        let agent_config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_s)))
            .http_status_as_error(false)
            .build();
        Self {
            gate: InFlightGate::new(config.max_in_flight),
            agent: ureq::Agent::new_with_config(agent_config),
            api_key: api_key.into(),
            config,
        }
    }

    /// Reads the key from [`API_KEY_VAR`].
    pub fn from_env(config: ChatConfig) -> Result<Self, ChatError> {
        match std::env::var(API_KEY_VAR) {
            Ok(key) if !key.is_empty() => Ok(Self::new(config, key)),
            _ => Err(ChatError::AuthMissing),
        }
    }

    pub fn config(&self) -> &ChatConfig {
        &self.config
    }

    pub fn send(&self, messages: &[Message]) -> Result<ChatOutcome, ChatError> {
        let _permit = self.gate.acquire();
        let url = format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'));
        let body = request_body(&self.config, messages);
        let base = Duration::from_millis(self.config.backoff_base_ms);
        let mut last = String::new();
        for attempt in 1..=self.config.max_attempts {
            if attempt > 1 {
                thread::sleep(backoff_delay(attempt - 2, base, rand::thread_rng().gen()));
            }
            let result =
                self.agent.post(&url).header("Authorization", &format!("Bearer {}", self.api_key)).send_json(&body);
            let mut response = match result {
                Ok(r) => r,
                Err(e) => {
                    last = e.to_string();
                    continue;
                }
            };
            let status = response.status().as_u16();
            if status == 429 || (500..600).contains(&status) {
                last = format!("HTTP {status}");
                continue;
            }
            if !(200..300).contains(&status) {
                return Err(ChatError::HttpError(status));
            }
            let text = response.body_mut().read_to_string().map_err(|e| ChatError::MalformedBody(e.to_string()))?;
            return parse_response_body(&text).map(|text| ChatOutcome { text, attempts: attempt });
        }
        Err(ChatError::TransportFailure { attempts: self.config.max_attempts, last })
    }
}

impl ChatClient for HttpChatClient {
    fn chat(&self, messages: &[Message]) -> Result<String, ChatError> {
        self.send(messages).map(|o| o.text)
    }
}

/// One scripted stub reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StubReply {
    Text(String),
    Fail(ChatError),
}

impl From<&str> for StubReply {
    fn from(s: &str) -> Self {
        StubReply::Text(s.to_owned())
    }
}

/// Replays a fixed script of replies, recording every request.
pub struct StubClient {
    script: Mutex<VecDeque<StubReply>>,
    cycle: Option<Vec<StubReply>>,
    calls: Mutex<Vec<Vec<Message>>>,
    delay: Option<Duration>,
    gate: Option<InFlightGate>,
    in_flight: AtomicUsize,
    peak_in_flight: AtomicUsize,
}

impl StubClient {
    /// Replies in order; the call after the last entry fails with
    /// [`ChatError::ScriptExhausted`].
    pub fn new(script: impl IntoIterator<Item = StubReply>) -> Self {
        Self {
            script: Mutex::new(script.into_iter().collect()),
            cycle: None,
            calls: Mutex::new(Vec::new()),
            delay: None,
            gate: None,
            in_flight: AtomicUsize::new(0),
            peak_in_flight: AtomicUsize::new(0),
        }
    }

    /// Replies in order and starts over when the script runs out.
    pub fn cycling(script: impl IntoIterator<Item = StubReply>) -> Self {
        let script: Vec<_> = script.into_iter().collect();
        assert!(!script.is_empty(), "stub script must not be empty");
        let mut stub = Self::new(script.clone());
        stub.cycle = Some(script);
        stub
    }

    /// Sleep this long inside every call.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }

    /// Enforce a concurrency bound like [`HttpChatClient`] does.
    pub fn with_max_in_flight(mut self, limit: usize) -> Self {
        self.gate = Some(InFlightGate::new(limit));
        self
    }

    /// Message lists received so far, in call order.
    pub fn calls(&self) -> Vec<Vec<Message>> {
        self.calls.lock().unwrap().clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().unwrap().len()
    }

    /// Highest number of calls observed running at once.
    pub fn peak_in_flight(&self) -> usize {
        self.peak_in_flight.load(Ordering::SeqCst)
    }
}

impl ChatClient for StubClient {
    fn chat(&self, messages: &[Message]) -> Result<String, ChatError> {
        let _permit = self.gate.as_ref().map(InFlightGate::acquire);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak_in_flight.fetch_max(now, Ordering::SeqCst);

        let reply = {
            let mut calls = self.calls.lock().unwrap();
            calls.push(messages.to_vec());
            let mut script = self.script.lock().unwrap();
            if script.is_empty() {
                if let Some(cycle) = &self.cycle {
                    script.extend(cycle.iter().cloned());
                }
            }
            script.pop_front().ok_or(ChatError::ScriptExhausted(calls.len() - 1))
        };
        if let Some(d) = self.delay {
            thread::sleep(d);
        }
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        match reply? {
            StubReply::Text(t) => Ok(t),
            StubReply::Fail(e) => Err(e),
        }
    }
}
