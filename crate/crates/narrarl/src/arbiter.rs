//! Arbiter dispatch, including the chat-backed arbiter.

use std::sync::Arc;
use std::time::{Duration, Instant};

use narrarl_core::narratives::{self, NarrativeError, NarrativeFramework, RenderOptions};
use narrarl_core::{parse_action, passthrough, scripted, ArbiterRequest, Message, Verdict};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm_client::{ChatClient, ChatError};

/// Appended after an unparseable reply before asking again.
pub const CORRECTIVE_INSTRUCTION: &str = "Your previous reply did not end with a valid action line. \
Reply again and finish with a final line of exactly this form:\nACTION: <UP|DOWN|LEFT|RIGHT>";

#[derive(Debug, Error)]
pub enum ArbiterError {
    #[error(transparent)]
    Narrative(#[from] NarrativeError),
    #[error(transparent)]
    Chat(#[from] ChatError),
}

/// What to do when the chat transport fails for good.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailurePolicy {
    /// Stop the run and report the error.
    #[default]
    Abort,
    /// Execute the suggestion and mark the step as a fallback.
    Fallback,
}

/// A verdict plus bookkeeping about how it was reached.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub verdict: Verdict,
    /// Chat calls made; 0 for local arbiters.
    pub attempts: u32,
    /// Messages of the first attempt, for optional prompt capture.
    pub prompt: Option<Vec<Message>>,
}

fn millis(d: Duration) -> u64 {
    d.as_millis().try_into().unwrap_or(u64::MAX)
}

/// Render, ask, parse. Unparseable replies are retried up to `retries` times
/// with [`CORRECTIVE_INSTRUCTION`] appended; after that the suggestion is
/// substituted and flagged as a fallback. The rationale is the last raw reply
/// and the latency sums every attempt.
pub fn llm_decide(
    request: &ArbiterRequest,
    framework: &NarrativeFramework,
    client: &dyn ChatClient,
    retries: u32,
    options: RenderOptions,
) -> Result<Decision, ArbiterError> {
    let prompt: Vec<Message> = narratives::render(framework, request, options)?.into();
    let mut messages = prompt.clone();
    let mut elapsed = Duration::ZERO;
    let mut attempts = 0;
    let mut reply = String::new();
    for _ in 0..=retries {
        let started = Instant::now();
        let result = client.chat(&messages);
        elapsed += started.elapsed();
        attempts += 1;
        reply = result?;
        if let Ok(action) = parse_action(&reply) {
            let mut verdict = Verdict::choose(request, action, reply);
            verdict.latency_ms = millis(elapsed);
            return Ok(Decision { verdict, attempts, prompt: Some(prompt) });
        }
        messages.push(Message::assistant(reply.clone()));
        messages.push(Message::user(CORRECTIVE_INSTRUCTION));
    }
    let mut verdict = Verdict::fallback(request, reply);
    verdict.latency_ms = millis(elapsed);
    Ok(Decision { verdict, attempts, prompt: Some(prompt) })
}

/// A chat-backed arbiter and its settings.
#[derive(Clone)]
pub struct LlmArbiter {
    pub framework: NarrativeFramework,
    pub client: Arc<dyn ChatClient>,
    pub retries: u32,
    pub options: RenderOptions,
    pub on_transport_failure: FailurePolicy,
}

#[derive(Clone)]
pub enum Arbiter {
    Passthrough,
    Scripted,
    Llm(LlmArbiter),
}

impl Arbiter {
    pub fn narrative_id(&self) -> Option<&str> {
        match self {
            Arbiter::Llm(llm) => Some(&llm.framework.id),
            _ => None,
        }
    }

    pub fn decide(&self, request: &ArbiterRequest) -> Result<Decision, ArbiterError> {
        let local = |f: fn(&ArbiterRequest) -> Verdict| {
            let started = Instant::now();
            let mut verdict = f(request);
            verdict.latency_ms = millis(started.elapsed());
            Ok(Decision { verdict, attempts: 0, prompt: None })
        };
        match self {
            Arbiter::Passthrough => local(passthrough),
            Arbiter::Scripted => local(scripted),
            Arbiter::Llm(llm) => {
                let started = Instant::now();
                match llm_decide(request, &llm.framework, llm.client.as_ref(), llm.retries, llm.options) {
                    Err(ArbiterError::Chat(e)) if llm.on_transport_failure == FailurePolicy::Fallback => {
                        let mut verdict = Verdict::fallback(request, format!("chat failure: {e}"));
                        verdict.latency_ms = millis(started.elapsed());
                        Ok(Decision { verdict, attempts: 1, prompt: None })
                    }
                    other => other,
                }
            }
        }
    }
}
