//! Agent sessions: a backend driven over tool calls until it reports.

mod remote;
mod runtime;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::adapter::{ContextDoc, Role};
use crate::tools::{ToolResult, ToolSpec};

pub use remote::{ChatCompletionsBackend, RemoteConfig, RemoteFactory};
pub use runtime::{Runtime, RuntimeConfig, SessionRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    pub arguments: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TranscriptRecord {
    Prompt {
        doc: ContextDoc,
    },
    ToolCall {
        call: ToolCall,
    },
    ToolResult {
        call_id: String,
        name: String,
        result: ToolResult,
    },
    ImageAttachment {
        call_id: String,
        path: String,
        digest: String,
        media_type: String,
    },
    FinalText {
        text: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgentAction {
    ToolCall(ToolCall),
    FinalText(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub tokens_in: u64,
    pub tokens_out: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendReply {
    pub action: AgentAction,
    pub usage: Usage,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("unparseable reply: {0}")]
    Parse(String),
}

/// A model, or a scripted stand-in for one.
pub trait AgentBackend: Send {
    /// Model id, or `scripted:<name>`.
    fn identity(&self) -> String;

    fn next_action(
        &mut self,
        transcript: &[TranscriptRecord],
        tools: &[ToolSpec],
    ) -> Result<BackendReply, BackendError>;
}

/// Creates one backend per session.
pub trait BackendFactory: Send + Sync {
    fn create(&self, role: Role, session_id: &str) -> Box<dyn AgentBackend>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionOutcome {
    Reported,
    LimitExceeded,
    BackendError,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionLimits {
    pub max_tool_calls: u64,
    /// Session clock budget in seconds; `0` means unlimited.
    pub wall_clock_s: u64,
}

impl Default for SessionLimits {
    fn default() -> Self {
        Self {
            max_tool_calls: 500,
            wall_clock_s: 0,
        }
    }
}

/// Token bookkeeping buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccountPhase {
    Phase0,
    Phase1,
    Phase2,
    Phase3,
    Supervisor,
}

impl AccountPhase {
    pub const ALL: [AccountPhase; 5] = [
        AccountPhase::Phase0,
        AccountPhase::Phase1,
        AccountPhase::Phase2,
        AccountPhase::Phase3,
        AccountPhase::Supervisor,
    ];

    pub fn of(role: Role) -> Self {
        match role {
            Role::Customizer | Role::Generator => AccountPhase::Phase0,
            Role::Explorer => AccountPhase::Phase1,
            Role::Builder | Role::Critic | Role::Tester => AccountPhase::Phase2,
            Role::Strategist | Role::Worker => AccountPhase::Phase3,
            Role::Supervisor => AccountPhase::Supervisor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSession {
    pub id: String,
    pub role: Role,
    pub phase: AccountPhase,
    pub parent: Option<String>,
    pub depth: u32,
    pub backend: String,
    pub transcript: Vec<TranscriptRecord>,
    pub tokens_in: u64,
    pub tokens_out: u64,
    /// Backend requests made, retries included.
    pub api_calls: u64,
    pub tool_calls: u64,
    pub limits: SessionLimits,
    pub outcome: SessionOutcome,
    pub report: Option<String>,
    /// Ended with bare text instead of `report_to_user`.
    pub protocol_deviation: bool,
    pub error: Option<String>,
}

impl AgentSession {
    pub fn reported(&self) -> bool {
        self.outcome == SessionOutcome::Reported
    }

    pub fn report_text(&self) -> &str {
        self.report.as_deref().unwrap_or("")
    }

    pub fn context_ids(&self) -> Vec<&str> {
        self.transcript
            .iter()
            .filter_map(|r| match r {
                TranscriptRecord::Prompt { doc } => Some(doc.id.as_str()),
                _ => None,
            })
            .collect()
    }

    pub fn summary(&self) -> SessionSummary {
        SessionSummary {
            id: self.id.clone(),
            role: self.role,
            phase: self.phase,
            parent: self.parent.clone(),
            tokens_in: self.tokens_in,
            tokens_out: self.tokens_out,
            calls: self.api_calls,
            outcome: self.outcome,
        }
    }

    /// Tool calls of one name, paired with their results.
    pub fn calls_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = (&'a ToolCall, Option<&'a ToolResult>)> {
        self.transcript.iter().filter_map(move |r| match r {
            TranscriptRecord::ToolCall { call } if call.name == name => {
                let result = self.transcript.iter().find_map(|r| match r {
                    TranscriptRecord::ToolResult { call_id, result, .. } if *call_id == call.id => Some(result),
                    _ => None,
                });
                Some((call, result))
            }
            _ => None,
        })
    }
}

/// One line of `logs/sessions/index.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub role: Role,
    pub phase: AccountPhase,
    pub parent: Option<String>,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub calls: u64,
    pub outcome: SessionOutcome,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub calls: u64,
}

impl Tally {
    fn add(&mut self, s: &SessionSummary) {
        self.tokens_in += s.tokens_in;
        self.tokens_out += s.tokens_out;
        self.calls += s.calls;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Accounting {
    pub per_phase: BTreeMap<AccountPhase, Tally>,
    pub totals: Tally,
    pub sessions: usize,
}

/// Per-phase and total token usage. Every phase appears, zeros included.
pub fn account(sessions: &[SessionSummary]) -> Accounting {
    let mut per_phase: BTreeMap<AccountPhase, Tally> =
        AccountPhase::ALL.into_iter().map(|p| (p, Tally::default())).collect();
    let mut totals = Tally::default();
    for s in sessions {
        per_phase.get_mut(&s.phase).expect("all phases present").add(s);
        totals.add(s);
    }
    Accounting {
        per_phase,
        totals,
        sessions: sessions.len(),
    }
}
