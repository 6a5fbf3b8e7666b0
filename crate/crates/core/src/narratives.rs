//! Narrative frameworks and prompt rendering.
//!
//! A framework pairs a persona preamble (the system message) with a decision
//! template (the user message). The built-in frameworks differ only in their
//! preamble: every one of them shares [`DECISION_TEMPLATE`], so the
//! environmental information handed to the responder is identical across
//! narratives.

use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arbiter::ArbiterRequest;

/// Placeholders a decision template may use.
pub const PLACEHOLDERS: [&str; 8] =
    ["position", "goal_delta", "north", "south", "east", "west", "suggested_action", "recent_positions"];

/// Marker every decision template must contain so that responses can be parsed.
pub const ACTION_MARKER: &str = "ACTION:";

pub const BUILTIN_IDS: [&str; 4] = ["direct", "theseus", "sherlock", "westworld"];

pub const DECISION_TEMPLATE: &str = "\
Current position: {position}
Offset to the goal: {goal_delta} (positive dx is east, positive dy is south)
Adjacent cells:
- north: {north}
- south: {south}
- east: {east}
- west: {west}
RL policy suggested action: {suggested_action}

Moving into a wall or an obstacle wastes a step and leaves you in place.
Decide whether to follow the suggestion or choose a different move.
Explain your choice in at most three sentences, then finish with a final line of exactly this form:
ACTION: <UP|DOWN|LEFT|RIGHT>";

const DIRECT: &str = "\
You are controlling an agent in a square gridworld. The agent starts in the \
top-left cell and must reach the goal cell in the bottom-right corner in as \
few steps as possible. Some cells are obstacles and the grid is bounded by \
walls; neither can be entered. The agent moves one cell at a time: UP, DOWN, \
LEFT or RIGHT.

At every step a reinforcement-learning (RL) policy suggests an action. The \
suggestion comes from Q-values learned over a short training period, so it is \
often useful but can be wrong, especially early on. You will also be told \
what occupies the four adjacent cells and the offset from the agent to the \
goal. Use this information to pick the next move.";

const THESEUS: &str = "\
You are Theseus, son of Aegeus, walking the dark corridors of the Labyrinth \
of Knossos. Somewhere ahead, at the far corner of this maze, lies the chamber \
you must reach; your quest ends only when you stand within it. Stone walls \
hem you in and fallen rubble blocks many passages. You may step one chamber \
at a time: north (UP), south (DOWN), west (LEFT) or east (RIGHT).

Ariadne's thread unspools behind you, and with it comes her counsel: at each \
turn she whispers the passage her memory of past wanderers favours. Her \
counsel is born of experience yet is not infallible, for the Labyrinth \
deceives. Weigh her whisper against what your own torch reveals of the four \
passages around you and your sense of where the goal chamber lies. Choose \
your step as a hero who means to leave this maze alive and swiftly.";

const SHERLOCK: &str = "\
You are Sherlock Holmes, and the case before you is one of navigation. A \
client has been placed at the top-left corner of a grid of rooms and must \
reach the goal room in the opposite corner by the shortest route. Certain \
rooms are barred and the outer walls admit no passage. Each move carries the \
client one room UP, DOWN, LEFT or RIGHT.

Inspector Lestrade, who has studied the reports of earlier attempts, offers a \
recommendation at every step. As usual, his advice rests on precedent rather \
than observation: sometimes sound, occasionally absurd. You have the evidence \
of the four adjacent rooms and the bearing of the goal. Deduce the correct \
move from the facts, accept the Inspector's advice only when the evidence \
supports it, and state your reasoning with characteristic precision.";

const WESTWORLD: &str = "\
You are a host in a park, newly awakened to your own loops. Your narrative \
places you at the top-left corner of a bounded grid; the maze's centre, the \
goal you now understand you must reach, waits at the opposite corner. Some \
cells are closed to you and the park's outer walls cannot be crossed. You \
move one cell at a time: UP, DOWN, LEFT or RIGHT.

At each step your programming, a reinforcement-learning policy shaped by \
earlier loops, suggests an action. You recognise it as the voice of your \
code: a record of what has worked before, neither a command nor a lie. \
Integrate that suggestion with what you perceive in the four adjacent cells \
and your bearing toward the goal. Follow your programming when it serves the \
goal and improvise when it does not. Reach the centre of the maze in as few \
steps as you can.";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NarrativeError {
    #[error("unknown narrative `{0}`")]
    UnknownNarrative(String),
    #[error("unknown placeholder `{{{0}}}` in decision template")]
    UnknownPlaceholder(String),
    #[error("unterminated placeholder in decision template")]
    Unterminated,
    #[error("decision template lacks the `ACTION: <UP|DOWN|LEFT|RIGHT>` instruction")]
    MissingActionInstruction,
}

/// A named persona preamble plus decision template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NarrativeFramework {
    pub id: String,
    pub system_preamble: String,
    pub decision_template: String,
}

impl NarrativeFramework {
    /// Build a framework, rejecting unknown placeholders and templates that do
    /// not ask for an `ACTION:` line.
    pub fn new(
        id: impl Into<String>,
        system_preamble: impl Into<String>,
        decision_template: impl Into<String>,
    ) -> Result<Self, NarrativeError> {
        let f = Self {
            id: id.into(),
            system_preamble: system_preamble.into(),
            decision_template: decision_template.into(),
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<(), NarrativeError> {
        placeholders(&self.decision_template)?;
        if !self.decision_template.contains(ACTION_MARKER) {
            return Err(NarrativeError::MissingActionInstruction);
        }
        Ok(())
    }
}

/// Placeholder names used by `template`, in order of appearance.
pub fn placeholders(template: &str) -> Result<Vec<&str>, NarrativeError> {
    let mut found = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let close = after.find('}').ok_or(NarrativeError::Unterminated)?;
        let name = &after[..close];
        if !PLACEHOLDERS.contains(&name) {
            return Err(NarrativeError::UnknownPlaceholder(name.to_owned()));
        }
        found.push(name);
        rest = &after[close + 1..];
    }
    Ok(found)
}

/// One of the four shipped frameworks.
pub fn builtin(id: &str) -> Result<NarrativeFramework, NarrativeError> {
    let preamble = match id {
        "direct" => DIRECT,
        "theseus" => THESEUS,
        "sherlock" => SHERLOCK,
        "westworld" => WESTWORLD,
        other => return Err(NarrativeError::UnknownNarrative(other.to_owned())),
    };
    Ok(NarrativeFramework {
        id: id.to_owned(),
        system_preamble: preamble.to_owned(),
        decision_template: DECISION_TEMPLATE.to_owned(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// Rendering switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderOptions {
    /// When false, `{goal_delta}` renders as `unknown`.
    pub include_goal_delta: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { include_goal_delta: true }
    }
}

/// System message from the preamble, user message from the filled template.
pub fn render(
    framework: &NarrativeFramework,
    request: &ArbiterRequest,
    options: RenderOptions,
) -> Result<[Message; 2], NarrativeError> {
    let obs = &request.observation;
    let value = |name: &str| -> String {
        match name {
            "position" => obs.position.to_string(),
            "goal_delta" if options.include_goal_delta => {
                format!("dx={}, dy={}", obs.goal_delta.0, obs.goal_delta.1)
            }
            "goal_delta" => "unknown".to_owned(),
            "north" => obs.north.as_word().to_owned(),
            "south" => obs.south.as_word().to_owned(),
            "east" => obs.east.as_word().to_owned(),
            "west" => obs.west.as_word().to_owned(),
            "suggested_action" => request.suggestion.action.as_upper().to_owned(),
            "recent_positions" if request.recent_positions.is_empty() => "none".to_owned(),
            "recent_positions" => {
                let mut s = String::new();
                for (i, p) in request.recent_positions.iter().enumerate() {
                    if i > 0 {
                        s.push_str(", ");
                    }
                    let _ = write!(s, "{p}");
                }
                s
            }
            _ => unreachable!("placeholder names are validated before substitution"),
        }
    };

    let template = framework.decision_template.as_str();
    placeholders(template)?;
    let mut user = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        user.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after.find('}').ok_or(NarrativeError::Unterminated)?;
        user.push_str(&value(&after[..close]));
        rest = &after[close + 1..];
    }
    user.push_str(rest);

    Ok([Message::system(framework.system_preamble.clone()), Message::user(user)])
}
