//! Read and steer surface for operators: board columns, leaderboard,
//! workspace files, reports, chat and the live event stream.
//!
//! Everything here reads the board except [`Gateway::post_chat`], which
//! appends a chat message for the next strategist turn. The HTTP layer in
//! [`http`] maps these calls onto routes.

pub mod http;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adapter::{ContextDoc, Role};
use crate::agent::{Runtime, SessionRequest};
use crate::board::{
    Board, ChatMessage, Direction, Experiment, ExperimentId, LeaderboardRow, LifecycleState, MetricScope, SharedBoard,
};
use crate::clock::{SharedClock, Timestamp};
use crate::tools::{board_digest, confine};

/// The nine display columns, in board order.
pub const COLUMNS: [&str; 9] = [
    "to_implement",
    "implemented",
    "checked",
    "queued",
    "running",
    "finished",
    "analyzed",
    "done",
    "cancelled",
];

pub const DEFAULT_PAGE_SIZE: usize = 100;
pub const API_SCHEMA: &str = include_str!("../../schema/gateway-api.json");

/// Display column of an internal state. In-progress and failed work shows
/// under `to_implement`; permanently failed work under `cancelled`. Cards
/// keep the real state.
pub fn column_for(state: LifecycleState) -> &'static str {
    use LifecycleState as S;
    match state {
        S::ToImplement | S::Implementing | S::Failed => "to_implement",
        S::Implemented => "implemented",
        S::Checked => "checked",
        S::Queued => "queued",
        S::Running => "running",
        S::Finished => "finished",
        S::Analyzed => "analyzed",
        S::Done => "done",
        S::Cancelled | S::FailedTerminal => "cancelled",
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("campaign halted: {0}")]
    CampaignHalted(String),
    #[error("path escapes the workspace: {0}")]
    PathEscape(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("not implemented: {0}")]
    Reserved(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GatewayError {
    pub fn kind(&self) -> &'static str {
        match self {
            GatewayError::CampaignHalted(_) => "campaign_halted",
            GatewayError::PathEscape(_) => "path_escape",
            GatewayError::NotFound(_) => "not_found",
            GatewayError::BadRequest(_) => "bad_request",
            GatewayError::Reserved(_) => "reserved",
            GatewayError::Io(_) => "io",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardMetric {
    pub name: String,
    #[serde(with = "crate::board::finite")]
    pub value: f64,
    pub scope: MetricScope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Card {
    pub id: ExperimentId,
    pub name: String,
    pub hypothesis: String,
    pub state: LifecycleState,
    /// Primary metric, if recorded.
    pub metric: Option<CardMetric>,
    pub worker: Option<String>,
    pub job: Option<String>,
    pub fix_attempts: u32,
    pub flagged: bool,
    pub updated_at: Timestamp,
}

impl Card {
    fn of(e: &Experiment, primary: &str) -> Self {
        Self {
            id: e.id.clone(),
            name: e.name.clone(),
            hypothesis: e.hypothesis.clone(),
            state: e.state,
            metric: e.metrics.get(primary).map(|m| CardMetric {
                name: m.name.clone(),
                value: m.value,
                scope: m.scope,
            }),
            worker: e.worker_id.clone(),
            job: e.job.as_ref().map(|j| j.id.clone()),
            fix_attempts: e.fix_attempts,
            flagged: e.is_flagged(),
            updated_at: e.updated_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub total: usize,
    /// 1-based.
    pub page: usize,
    pub pages: usize,
    pub page_size: usize,
    pub cards: Vec<Card>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub id: String,
    pub phase: crate::board::Phase,
    pub budget_initial: u32,
    pub budget_remaining: u32,
    pub band: String,
    pub analyzed_count: u32,
    pub stall_count: u32,
    pub convergence_window: u32,
    pub best_primary: Option<f64>,
    pub primary: String,
    pub direction: Direction,
    pub strategist_turns: u32,
    pub milestones: u32,
    pub interventions: u32,
    pub playbook_head: Option<u32>,
    pub halted: bool,
    pub halt_reason: Option<String>,
    pub experiments: usize,
    pub last_seq: u64,
}

impl CampaignSummary {
    pub fn of(b: &Board) -> Self {
        let c = b.campaign();
        Self {
            id: c.id.clone(),
            phase: c.phase,
            budget_initial: c.budget_initial,
            budget_remaining: c.budget_remaining,
            band: crate::dispatcher::budget_band(c.budget_remaining).as_str().to_string(),
            analyzed_count: c.analyzed_count,
            stall_count: c.stall_count,
            convergence_window: c.policy.convergence_window,
            best_primary: c.best_primary,
            primary: c.metric_spec.primary.clone(),
            direction: c.metric_spec.direction,
            strategist_turns: c.strategist_turns,
            milestones: c.milestones,
            interventions: c.interventions,
            playbook_head: b.playbook_head().map(|v| v.seq),
            halted: b.is_halted(),
            halt_reason: c.halt_reason.clone(),
            experiments: b.experiments().len(),
            last_seq: b.last_seq(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardView {
    pub campaign: CampaignSummary,
    pub columns: Vec<Column>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedRow {
    pub experiment: ExperimentId,
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardView {
    pub primary: String,
    pub direction: Direction,
    pub rows: Vec<LeaderboardRow>,
    /// Results kept off the ranking: smoke-only or non-finite metrics.
    pub flagged: Vec<FlaggedRow>,
    pub last_seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    File,
    Dir,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeEntry {
    pub name: String,
    /// Workspace-relative.
    pub path: String,
    pub kind: EntryKind,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatAck {
    pub seq: u64,
    pub at: Timestamp,
    /// Set when an answer session ran.
    pub answer: Option<String>,
    pub session: Option<String>,
}

fn page_of<T: Clone>(items: &[T], page: usize, page_size: usize) -> (Vec<T>, usize, usize) {
    let size = page_size.max(1);
    let pages = items.len().div_ceil(size).max(1);
    let page = page.clamp(1, pages);
    let start = (page - 1) * size;
    (items.iter().skip(start).take(size).cloned().collect(), page, pages)
}

/// Column `name` over any set of experiments, paginated.
pub fn column_of(experiments: &[Experiment], primary: &str, name: &str, page: usize, page_size: usize) -> Option<Column> {
    if !COLUMNS.contains(&name) {
        return None;
    }
    let cards: Vec<Card> = experiments
        .iter()
        .filter(|e| column_for(e.state) == name)
        .map(|e| Card::of(e, primary))
        .collect();
    let (cards_page, page, pages) = page_of(&cards, page, page_size);
    Some(Column {
        name: name.to_string(),
        total: cards.len(),
        page,
        pages,
        page_size: page_size.max(1),
        cards: cards_page,
    })
}

/// Column `name` of a board, paginated.
pub fn column(board: &Board, name: &str, page: usize, page_size: usize) -> Option<Column> {
    column_of(board.experiments(), &board.campaign().metric_spec.primary, name, page, page_size)
}

pub fn board_view(board: &Board, page: usize, page_size: usize) -> BoardView {
    BoardView {
        campaign: CampaignSummary::of(board),
        columns: COLUMNS
            .iter()
            .map(|c| column(board, c, page, page_size).expect("known column"))
            .collect(),
    }
}

pub fn leaderboard_view(board: &Board, top_k: Option<usize>) -> LeaderboardView {
    let spec = &board.campaign().metric_spec;
    let mut flagged = Vec::new();
    for e in board.experiments() {
        if e.is_flagged() {
            flagged.push(FlaggedRow {
                experiment: e.id.clone(),
                name: e.name.clone(),
                reason: format!("non-finite metric: {}", e.flags.join(", ")),
            });
        } else if let Some(m) = e.metrics.get(&spec.primary) {
            let settled = e.state.is_terminal() || e.state == LifecycleState::Analyzed;
            if m.scope == MetricScope::Smoke && settled {
                flagged.push(FlaggedRow {
                    experiment: e.id.clone(),
                    name: e.name.clone(),
                    reason: "smoke-test result only".into(),
                });
            }
        }
    }
    LeaderboardView {
        primary: spec.primary.clone(),
        direction: spec.direction,
        rows: board.leaderboard(top_k),
        flagged,
        last_seq: board.last_seq(),
    }
}

fn relative(workspace: &Path, p: &Path) -> String {
    let root = workspace.canonicalize().unwrap_or_else(|_| workspace.to_path_buf());
    p.strip_prefix(&root).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

/// One directory level of the workspace.
pub fn tree(workspace: &Path, path: &str) -> Result<Vec<TreeEntry>, GatewayError> {
    let dir = confine(workspace, if path.is_empty() { "." } else { path })
        .map_err(|_| GatewayError::PathEscape(path.to_string()))?;
    if !dir.is_dir() {
        return Err(GatewayError::NotFound(path.to_string()));
    }
    let mut out: Vec<TreeEntry> = fs::read_dir(&dir)?
        .filter_map(Result::ok)
        .filter_map(|e| {
            let meta = e.metadata().ok()?;
            Some(TreeEntry {
                name: e.file_name().to_string_lossy().into_owned(),
                path: relative(workspace, &e.path()),
                kind: if meta.is_dir() { EntryKind::Dir } else { EntryKind::File },
                bytes: if meta.is_dir() { 0 } else { meta.len() },
            })
        })
        .collect();
    out.sort_by(|a, b| (a.kind != EntryKind::Dir, &a.name).cmp(&(b.kind != EntryKind::Dir, &b.name)));
    Ok(out)
}

pub fn read_file(workspace: &Path, path: &str) -> Result<Vec<u8>, GatewayError> {
    let p = confine(workspace, path).map_err(|_| GatewayError::PathEscape(path.to_string()))?;
    if !p.is_file() {
        return Err(GatewayError::NotFound(path.to_string()));
    }
    Ok(fs::read(p)?)
}

/// Milestone overviews and supervisor records, workspace-relative and sorted.
pub fn reports(workspace: &Path) -> Vec<String> {
    let root = workspace.join("reports");
    let mut out: Vec<String> = walkdir::WalkDir::new(&root)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file())
        .map(|e| {
            let rel = e.path().strip_prefix(workspace).unwrap_or(e.path());
            rel.to_string_lossy().replace('\\', "/")
        })
        .collect();
    out.sort();
    out
}

/// Shared state behind the HTTP API.
#[derive(Clone)]
pub struct Gateway {
    board: SharedBoard,
    workspace: PathBuf,
    clock: SharedClock,
    runtime: Option<Arc<Runtime>>,
    read_only: bool,
    pub page_size: usize,
    pub static_dir: Option<PathBuf>,
}

impl Gateway {
    pub fn new(board: SharedBoard, workspace: impl Into<PathBuf>, clock: SharedClock) -> Self {
        Self {
            board,
            workspace: workspace.into(),
            clock,
            runtime: None,
            read_only: false,
            page_size: DEFAULT_PAGE_SIZE,
            static_dir: None,
        }
    }

    /// Enables answer sessions for chat questions.
    pub fn with_runtime(mut self, runtime: Arc<Runtime>) -> Self {
        self.runtime = Some(runtime);
        self
    }

    /// Refuses chat. For serving a journal no campaign is running on.
    pub fn read_only(mut self) -> Self {
        self.read_only = true;
        self
    }

    pub fn with_page_size(mut self, n: usize) -> Self {
        self.page_size = n.max(1);
        self
    }

    pub fn with_static_dir(mut self, dir: Option<PathBuf>) -> Self {
        self.static_dir = dir;
        self
    }

    pub fn board(&self) -> &SharedBoard {
        &self.board
    }

    pub fn workspace(&self) -> &Path {
        &self.workspace
    }

    pub fn runtime(&self) -> Option<&Arc<Runtime>> {
        self.runtime.as_ref()
    }

    pub fn campaign(&self) -> CampaignSummary {
        self.board.read(CampaignSummary::of)
    }

    pub fn get_board(&self, page: usize, page_size: Option<usize>) -> BoardView {
        let size = page_size.unwrap_or(self.page_size);
        self.board.read(|b| board_view(b, page, size))
    }

    pub fn get_column(&self, name: &str, page: usize, page_size: Option<usize>) -> Result<Column, GatewayError> {
        let size = page_size.unwrap_or(self.page_size);
        self.board
            .read(|b| column(b, name, page, size))
            .ok_or_else(|| GatewayError::NotFound(format!("column {name}")))
    }

    pub fn get_experiment(&self, id: &str) -> Result<Experiment, GatewayError> {
        self.board
            .read(|b| {
                b.experiment(&ExperimentId(id.to_string()))
                    .or_else(|| b.experiment_by_name(id))
                    .cloned()
            })
            .ok_or_else(|| GatewayError::NotFound(format!("experiment {id}")))
    }

    pub fn get_leaderboard(&self, top_k: Option<usize>) -> LeaderboardView {
        self.board.read(|b| leaderboard_view(b, top_k))
    }

    pub fn get_tree(&self, path: &str) -> Result<Vec<TreeEntry>, GatewayError> {
        tree(&self.workspace, path)
    }

    pub fn get_file(&self, path: &str) -> Result<Vec<u8>, GatewayError> {
        read_file(&self.workspace, path)
    }

    pub fn list_reports(&self) -> Vec<String> {
        reports(&self.workspace)
    }

    pub fn get_report(&self, path: &str) -> Result<Vec<u8>, GatewayError> {
        let rel = format!("reports/{}", path.trim_start_matches('/'));
        read_file(&self.workspace, &rel)
    }

    pub fn chat_history(&self) -> Vec<ChatMessage> {
        self.board.read(|b| b.chat().to_vec())
    }

    /// Persists an operator message for the next strategist turn.
    pub fn post_chat(&self, message: &str) -> Result<ChatAck, GatewayError> {
        let message = message.trim();
        if self.read_only {
            return Err(GatewayError::BadRequest("gateway is read-only".into()));
        }
        if message.is_empty() {
            return Err(GatewayError::BadRequest("empty message".into()));
        }
        let now = self.clock.now();
        let seq = self.board.write(|b| {
            if b.is_halted() {
                Err(GatewayError::CampaignHalted(b.campaign().halt_reason.clone().unwrap_or_default()))
            } else {
                Ok(b.post_chat(message, now))
            }
        })?;
        Ok(ChatAck {
            seq,
            at: now,
            answer: None,
            session: None,
        })
    }

    /// Posts the message, then answers it with a short worker-role session
    /// over the board digest. Proposals are not possible from here: the
    /// answer session has no budget-consuming tools.
    pub fn ask(&self, message: &str) -> Result<ChatAck, GatewayError> {
        let mut ack = self.post_chat(message)?;
        let Some(runtime) = &self.runtime else {
            return Ok(ack);
        };
        let docs = self.board.read(|b| {
            let digest = serde_json::to_string_pretty(&board_digest(b)).expect("digest serializes");
            let mut docs = vec![ContextDoc::new("board", "Board digest", digest)];
            if let Some(p) = b.playbook_head() {
                docs.push(ContextDoc::new(format!("playbook:v{}", p.seq), "Playbook", p.content.clone()));
            }
            docs
        });
        let mut ctx = vec![ContextDoc::new(
            "chat:question",
            "Operator question",
            format!("task: answer\nAnswer the operator briefly. Do not start work.\n\n{message}\n"),
        )];
        ctx.extend(docs);
        let session = runtime.run_session(SessionRequest::new(Role::Worker, ctx));
        ack.answer = Some(session.report_text().to_string());
        ack.session = Some(session.id);
        Ok(ack)
    }

    /// Endpoints reserved for operator vetoes and playbook edits.
    pub fn reserved(&self, what: &str) -> GatewayError {
        GatewayError::Reserved(what.to_string())
    }
}
