use std::collections::BTreeMap;

use serde_json::{json, Value};

use super::{str_arg, ToolErrorKind, ToolResult};
use crate::adapter::Role;
use crate::board::{Board, PlaybookAuthor, ProposalOutcome, SharedBoard};
use crate::clock::Timestamp;
use crate::dispatcher::budget_band;

fn unavailable() -> ToolResult {
    ToolResult::error(ToolErrorKind::BoardUnavailable, "no experiment board in this phase")
}

/// Compact view of the board for agents.
pub fn digest(board: &Board) -> Value {
    let c = board.campaign();
    let mut columns: BTreeMap<&str, usize> = BTreeMap::new();
    for e in board.experiments() {
        *columns.entry(e.state.as_str()).or_default() += 1;
    }
    let leaderboard: Vec<Value> = board
        .leaderboard(Some(10))
        .into_iter()
        .map(|r| json!({ "rank": r.rank, "experiment": r.experiment, "name": r.name, "value": r.value }))
        .collect();
    let flagged: Vec<&str> = board
        .experiments()
        .iter()
        .filter(|e| e.is_flagged())
        .map(|e| e.name.as_str())
        .collect();
    json!({
        "campaign": c.id,
        "phase": c.phase,
        "primary_metric": c.metric_spec.primary,
        "direction": c.metric_spec.direction,
        "budget_remaining": c.budget_remaining,
        "budget_initial": c.budget_initial,
        "band": budget_band(c.budget_remaining),
        "analyzed_count": c.analyzed_count,
        "stall_count": c.stall_count,
        "best_primary": c.best_primary,
        "playbook_head": c.playbook_head,
        "columns": columns,
        "leaderboard": leaderboard,
        "flagged": flagged,
    })
}

pub(crate) fn read_board(board: Option<&SharedBoard>) -> ToolResult {
    match board {
        Some(b) => ToolResult::record(b.read(digest)),
        None => unavailable(),
    }
}

pub(crate) fn update_playbook(board: Option<&SharedBoard>, role: Role, args: &Value, at: Timestamp) -> ToolResult {
    let Some(board) = board else {
        return unavailable();
    };
    let author = if role == Role::Supervisor {
        PlaybookAuthor::Supervisor
    } else {
        PlaybookAuthor::Strategist
    };
    let content = str_arg(args, "content").unwrap_or_default();
    match board.write(|b| b.append_playbook(content, author, at)) {
        Ok(v) => ToolResult::record(json!({ "seq": v.seq })),
        Err(e) => ToolResult::error(ToolErrorKind::InvalidArgument, e.to_string()),
    }
}

/// Experiment names become directory names.
pub fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 96
        && !name.starts_with('.')
        && name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

pub(crate) fn propose(board: Option<&SharedBoard>, args: &Value, at: Timestamp) -> ToolResult {
    let Some(board) = board else {
        return unavailable();
    };
    let name = str_arg(args, "name").unwrap_or_default();
    if !valid_name(name) {
        return ToolResult::error(
            ToolErrorKind::InvalidArgument,
            "name must be letters, digits, `_`, `-` or `.`",
        );
    }
    let hypothesis = str_arg(args, "hypothesis").unwrap_or_default();
    let hint = args.get("priority_hint").and_then(Value::as_i64);
    let result = board.write(|b| b.propose(name, hypothesis, hint, at));
    match result.outcome {
        ProposalOutcome::Accepted => ToolResult::record(json!({ "accepted": true, "experiment": result.experiment })),
        other => ToolResult::record(json!({ "accepted": false, "reason": other })),
    }
}
