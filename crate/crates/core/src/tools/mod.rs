//! The agent tool set behind one dispatch entry point.
//!
//! Every failure comes back as a failed [`ToolResult`] so the agent can read
//! it; nothing here returns an error to the session loop.

mod board;
mod files;
mod schema;
pub mod search;
mod shell;

use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::adapter::Role;
use crate::agent::ToolCall;
use crate::board::SharedBoard;
use crate::clock::SharedClock;

pub use board::{digest as board_digest, valid_name};
pub use files::{confine, PathEscape};
pub use schema::{schema_document, tool_specs, ArgKind, ArgSpec, SideEffect, ToolSpec, TOOL_NAMES};
pub use search::{FixtureSearch, HttpSearch, SearchHit, SearchProvider};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolErrorKind {
    UnknownTool,
    RoleForbidden,
    ArgumentSchemaViolation,
    InvalidArgument,
    PathEscape,
    NotFound,
    Timeout,
    ShellDisabled,
    BoardUnavailable,
    SpawnDepthExceeded,
    Provider,
    Io,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    Text {
        text: String,
    },
    Record {
        value: Value,
    },
    /// `path` is workspace-relative.
    Image {
        path: String,
        digest: String,
        media_type: String,
        bytes: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub ok: bool,
    pub payload: Payload,
    pub duration_s: f64,
}

impl ToolResult {
    pub fn record(value: Value) -> Self {
        Self {
            ok: true,
            payload: Payload::Record { value },
            duration_s: 0.0,
        }
    }

    pub fn text(text: impl Into<String>) -> Self {
        Self {
            ok: true,
            payload: Payload::Text { text: text.into() },
            duration_s: 0.0,
        }
    }

    pub fn error(kind: ToolErrorKind, message: impl Into<String>) -> Self {
        Self::error_with(kind, message, json!({}))
    }

    /// A failed result carrying extra fields next to `error` and `message`.
    pub fn error_with(kind: ToolErrorKind, message: impl Into<String>, extra: Value) -> Self {
        let mut value = json!({ "error": kind, "message": message.into() });
        if let (Some(obj), Value::Object(more)) = (value.as_object_mut(), extra) {
            obj.extend(more);
        }
        Self {
            ok: false,
            payload: Payload::Record { value },
            duration_s: 0.0,
        }
    }

    pub fn error_kind(&self) -> Option<ToolErrorKind> {
        if self.ok {
            return None;
        }
        match &self.payload {
            Payload::Record { value } => serde_json::from_value(value.get("error")?.clone()).ok(),
            _ => None,
        }
    }

    /// Payload as the plain text an agent would read.
    pub fn render(&self) -> String {
        match &self.payload {
            Payload::Text { text } => text.clone(),
            Payload::Record { value } => value.to_string(),
            Payload::Image { path, digest, .. } => format!("image {path} sha256:{digest}"),
        }
    }
}

/// What the session loop must do after a tool call.
#[derive(Debug, Clone, PartialEq)]
pub enum Dispatch {
    Done(ToolResult),
    /// `report_to_user` fired; the session ends with this message.
    Report(String),
    /// `spawn_agent` fired; the runtime starts a child session.
    Spawn {
        prompt: String,
        max_tool_calls: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolLimits {
    pub shell_enabled: bool,
    pub shell_default_timeout_s: u64,
    pub shell_max_timeout_s: u64,
    /// Byte cap per output stream; the tail is kept.
    pub output_cap: usize,
    pub read_cap: usize,
    pub grep_max_matches: usize,
}

impl Default for ToolLimits {
    fn default() -> Self {
        Self {
            shell_enabled: true,
            shell_default_timeout_s: 600,
            shell_max_timeout_s: 3600,
            output_cap: 64 * 1024,
            read_cap: 256 * 1024,
            grep_max_matches: 200,
        }
    }
}

/// Who is calling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallerInfo {
    pub session: String,
    pub role: Role,
    pub depth: u32,
}

/// Whether `role` may call `tool`. Only the board-writing tools are gated.
pub fn allowed(role: Role, tool: &str) -> bool {
    match tool {
        "propose_experiment" => role == Role::Strategist,
        "update_playbook" => matches!(role, Role::Strategist | Role::Supervisor),
        _ => true,
    }
}

pub struct Toolbelt {
    workspace: PathBuf,
    board: OnceLock<SharedBoard>,
    search: Arc<dyn SearchProvider>,
    limits: ToolLimits,
    clock: SharedClock,
    specs: Vec<ToolSpec>,
}

impl Toolbelt {
    pub fn new(workspace: impl Into<PathBuf>, clock: SharedClock) -> Self {
        Self {
            workspace: workspace.into(),
            board: OnceLock::new(),
            search: Arc::new(FixtureSearch::default()),
            limits: ToolLimits::default(),
            clock,
            specs: tool_specs(),
        }
    }

    pub fn with_board(self, board: SharedBoard) -> Self {
        self.attach_board(board);
        self
    }

    /// Binds the board after construction, for runtimes created before the
    /// board exists (phase 0 runs before the metric spec is known). The
    /// first binding wins.
    pub fn attach_board(&self, board: SharedBoard) -> bool {
        self.board.set(board).is_ok()
    }

    pub fn with_search(mut self, search: Arc<dyn SearchProvider>) -> Self {
        self.search = search;
        self
    }

    pub fn with_limits(mut self, limits: ToolLimits) -> Self {
        self.limits = limits;
        self
    }

    pub fn workspace(&self) -> &std::path::Path {
        &self.workspace
    }

    pub fn board(&self) -> Option<&SharedBoard> {
        self.board.get()
    }

    pub fn specs(&self) -> &[ToolSpec] {
        &self.specs
    }

    /// Specs offered to a role's backend.
    pub fn specs_for(&self, role: Role) -> Vec<ToolSpec> {
        self.specs.iter().filter(|s| allowed(role, &s.name)).cloned().collect()
    }

    pub fn dispatch(&self, caller: &CallerInfo, call: &ToolCall) -> Dispatch {
        let started = self.clock.now();
        let Some(spec) = self.specs.iter().find(|s| s.name == call.name) else {
            return Dispatch::Done(ToolResult::error(
                ToolErrorKind::UnknownTool,
                format!("no tool named `{}`", call.name),
            ));
        };
        if !allowed(caller.role, &call.name) {
            return Dispatch::Done(ToolResult::error(
                ToolErrorKind::RoleForbidden,
                format!("role `{}` may not call `{}`", caller.role, call.name),
            ));
        }
        if let Err(msg) = spec.check(&call.arguments) {
            return Dispatch::Done(ToolResult::error(ToolErrorKind::ArgumentSchemaViolation, msg));
        }
        let args = &call.arguments;
        let mut result = match call.name.as_str() {
            "report_to_user" => return Dispatch::Report(str_arg(args, "message").unwrap_or("").to_string()),
            "spawn_agent" => {
                return Dispatch::Spawn {
                    prompt: str_arg(args, "prompt").unwrap_or("").to_string(),
                    max_tool_calls: args.get("max_tool_calls").and_then(Value::as_u64),
                };
            }
            "shell_exec" => shell::exec(&self.workspace, &self.limits, args),
            "read_file" => files::read_file(&self.workspace, &self.limits, args),
            "grep_file" => files::grep_file(&self.workspace, &self.limits, args),
            "view_image" => files::view_image(&self.workspace, args),
            "web_search" => search::run(self.search.as_ref(), args),
            "read_board" => board::read_board(self.board.get()),
            "update_playbook" => board::update_playbook(self.board.get(), caller.role, args, self.clock.now()),
            "propose_experiment" => board::propose(self.board.get(), args, self.clock.now()),
            other => ToolResult::error(ToolErrorKind::UnknownTool, format!("no tool named `{other}`")),
        };
        result.duration_s = self.clock.now().saturating_sub(started) as f64 / 1000.0;
        Dispatch::Done(result)
    }
}

pub(crate) fn str_arg<'a>(args: &'a Value, key: &str) -> Option<&'a str> {
    args.get(key).and_then(Value::as_str)
}
