//! The decision layer between the Q-learning suggestion and the executed move.
//!
//! Local arbiters live here. The chat-backed arbiter needs a transport and a
//! clock and is implemented in the `narrarl` crate on top of [`parse_action`].

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{Action, Observation, Position};
use crate::rl::Suggestion;

/// Default length of the `recent_positions` window.
pub const DEFAULT_HISTORY: usize = 5;

/// Everything an arbiter may look at for one decision.
#[derive(Debug, Clone, PartialEq)]
pub struct ArbiterRequest {
    pub episode: usize,
    pub step: usize,
    pub observation: Observation,
    pub suggestion: Suggestion,
    pub narrative_id: Option<String>,
    /// Most recent positions, oldest first, excluding the current one.
    pub recent_positions: Vec<Position>,
}

/// The executed action and how it relates to the suggestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub action: Action,
    pub followed_suggestion: bool,
    pub rationale: String,
    /// The responder's output was unusable and the suggestion was substituted.
    pub fallback: bool,
    pub latency_ms: u64,
}

impl Verdict {
    /// Verdict executing `action` for `request`.
    pub fn choose(request: &ArbiterRequest, action: Action, rationale: String) -> Self {
        Verdict {
            action,
            followed_suggestion: action == request.suggestion.action,
            rationale,
            fallback: false,
            latency_ms: 0,
        }
    }

    /// Verdict substituting the suggestion after unusable responder output.
    pub fn fallback(request: &ArbiterRequest, rationale: String) -> Self {
        Verdict {
            action: request.suggestion.action,
            followed_suggestion: true,
            rationale,
            fallback: true,
            latency_ms: 0,
        }
    }
}

/// Execute the suggestion unchanged. This is the RL-only control.
pub fn passthrough(request: &ArbiterRequest) -> Verdict {
    Verdict::choose(request, request.suggestion.action, String::new())
}

/// Keep the suggestion unless it walks into a wall or obstacle; otherwise take
/// the free move that leaves the smallest Manhattan distance to the goal, ties
/// in canonical action order.
pub fn scripted(request: &ArbiterRequest) -> Verdict {
    let obs = &request.observation;
    let suggested = request.suggestion.action;
    if !obs.label(suggested).is_blocked() {
        return Verdict::choose(request, suggested, String::new());
    }
    let (gx, gy) = obs.goal_delta;
    let remaining = |a: Action| {
        let (dx, dy) = a.delta();
        (gx - dx).unsigned_abs() + (gy - dy).unsigned_abs()
    };
    let replacement = Action::ALL
        .into_iter()
        .filter(|&a| !obs.label(a).is_blocked())
        .min_by_key(|&a| remaining(a))
        .unwrap_or(suggested);
    Verdict::choose(request, replacement, String::new())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no line of the response contains `ACTION: <up|down|left|right>`")]
pub struct MalformedResponse;

/// Extract the action from free text.
///
/// Lines are scanned last to first. A line matches when it contains
/// `action:` (any case) followed by one of `up`, `down`, `left`, `right`;
/// surrounding whitespace and markdown emphasis are ignored.
pub fn parse_action(text: &str) -> Result<Action, MalformedResponse> {
    text.lines().rev().find_map(parse_line).ok_or(MalformedResponse)
}

fn parse_line(line: &str) -> Option<Action> {
    let lower = line.to_ascii_lowercase();
    let at = lower.rfind("action:")?;
    let rest = lower[at + "action:".len()..].trim_start_matches(|c: char| c.is_whitespace() || c == '*' || c == '`');
    let word: String = rest.chars().take_while(char::is_ascii_alphabetic).collect();
    let tail = rest[word.len()..].trim_matches(|c: char| c.is_whitespace() || matches!(c, '*' | '`' | '.' | '!'));
    if !tail.is_empty() {
        return None;
    }
    match word.as_str() {
        "up" => Some(Action::Up),
        "down" => Some(Action::Down),
        "left" => Some(Action::Left),
        "right" => Some(Action::Right),
        _ => None,
    }
}
