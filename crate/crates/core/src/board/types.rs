use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::cluster::JobHandle;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExperimentId(pub String);

impl ExperimentId {
    pub fn from_index(n: u32) -> Self {
        Self(format!("exp-{n:04}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ExperimentId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// Internal lifecycle of an experiment. The nine display columns plus three
/// internal states (`implementing`, `failed`, `failed_terminal`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleState {
    ToImplement,
    Implementing,
    Implemented,
    Checked,
    Queued,
    Running,
    Finished,
    Failed,
    Analyzed,
    Done,
    Cancelled,
    FailedTerminal,
}

impl LifecycleState {
    pub const ALL: [LifecycleState; 12] = [
        LifecycleState::ToImplement,
        LifecycleState::Implementing,
        LifecycleState::Implemented,
        LifecycleState::Checked,
        LifecycleState::Queued,
        LifecycleState::Running,
        LifecycleState::Finished,
        LifecycleState::Failed,
        LifecycleState::Analyzed,
        LifecycleState::Done,
        LifecycleState::Cancelled,
        LifecycleState::FailedTerminal,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            LifecycleState::Done | LifecycleState::Cancelled | LifecycleState::FailedTerminal
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LifecycleState::ToImplement => "to_implement",
            LifecycleState::Implementing => "implementing",
            LifecycleState::Implemented => "implemented",
            LifecycleState::Checked => "checked",
            LifecycleState::Queued => "queued",
            LifecycleState::Running => "running",
            LifecycleState::Finished => "finished",
            LifecycleState::Failed => "failed",
            LifecycleState::Analyzed => "analyzed",
            LifecycleState::Done => "done",
            LifecycleState::Cancelled => "cancelled",
            LifecycleState::FailedTerminal => "failed_terminal",
        }
    }
}

impl fmt::Display for LifecycleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LifecycleState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LifecycleState::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown lifecycle state `{s}`"))
    }
}

/// Something that happened to an experiment and may move it along the lifecycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleEvent {
    /// A worker picked up the implement task.
    Assign,
    /// The worker wrote the experiment entry point.
    CodeWritten,
    /// Smoke test and reality check passed.
    CheckPassed,
    /// The dispatcher put the experiment in the cluster queue.
    Enqueue,
    JobLaunched,
    JobSucceeded,
    JobFailed,
    /// Debrief written by an analyze worker.
    DebriefWritten,
    /// The strategist has seen the debrief.
    Acknowledge,
    /// A fix task was assigned.
    Fix,
    /// A worker session ended without the artifacts its task requires.
    WorkerFailed,
    Cancel,
}

impl LifecycleEvent {
    pub fn as_str(self) -> &'static str {
        match self {
            LifecycleEvent::Assign => "assign",
            LifecycleEvent::CodeWritten => "code_written",
            LifecycleEvent::CheckPassed => "check_passed",
            LifecycleEvent::Enqueue => "enqueue",
            LifecycleEvent::JobLaunched => "job_launched",
            LifecycleEvent::JobSucceeded => "job_succeeded",
            LifecycleEvent::JobFailed => "job_failed",
            LifecycleEvent::DebriefWritten => "debrief_written",
            LifecycleEvent::Acknowledge => "acknowledge",
            LifecycleEvent::Fix => "fix",
            LifecycleEvent::WorkerFailed => "worker_failed",
            LifecycleEvent::Cancel => "cancel",
        }
    }

    pub const ALL: [LifecycleEvent; 12] = [
        LifecycleEvent::Assign,
        LifecycleEvent::CodeWritten,
        LifecycleEvent::CheckPassed,
        LifecycleEvent::Enqueue,
        LifecycleEvent::JobLaunched,
        LifecycleEvent::JobSucceeded,
        LifecycleEvent::JobFailed,
        LifecycleEvent::DebriefWritten,
        LifecycleEvent::Acknowledge,
        LifecycleEvent::Fix,
        LifecycleEvent::WorkerFailed,
        LifecycleEvent::Cancel,
    ];
}

impl fmt::Display for LifecycleEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Min,
    Max,
}

impl Direction {
    /// Strict improvement: ties never count.
    pub fn improves(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            Direction::Min => candidate < incumbent,
            Direction::Max => candidate > incumbent,
        }
    }

    /// Ordering that puts the better value first.
    pub fn rank(self, a: f64, b: f64) -> std::cmp::Ordering {
        match self {
            Direction::Min => a.total_cmp(&b),
            Direction::Max => b.total_cmp(&a),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricScope {
    Smoke,
    Full,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRecord {
    pub name: String,
    #[serde(with = "crate::board::finite")]
    pub value: f64,
    pub direction: Direction,
    pub scope: MetricScope,
    pub recorded_at: Timestamp,
}

impl PartialEq for MetricRecord {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.value.to_bits() == other.value.to_bits()
            && self.direction == other.direction
            && self.scope == other.scope
            && self.recorded_at == other.recorded_at
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricDef {
    pub name: String,
    pub direction: Direction,
    #[serde(default)]
    pub primary: bool,
}

/// The metrics a campaign tracks, with the primary one singled out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub primary: String,
    pub direction: Direction,
    pub metrics: Vec<MetricDef>,
}

impl MetricSpec {
    pub fn single(name: &str, direction: Direction) -> Self {
        Self {
            primary: name.to_string(),
            direction,
            metrics: vec![MetricDef {
                name: name.to_string(),
                direction,
                primary: true,
            }],
        }
    }

    pub fn get(&self, name: &str) -> Option<&MetricDef> {
        self.metrics.iter().find(|m| m.name == name)
    }
}

/// Campaign-level knobs that the board's rules depend on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Policy {
    /// Repair attempts allowed per experiment.
    pub k_max: u32,
    /// Consecutive non-improving analyzed experiments before halting.
    pub convergence_window: u32,
    /// Supervisor failure-rate threshold.
    pub tau: f64,
    pub strategist_cadence: u32,
    pub milestone_cadence: u32,
    pub tick_seconds: u64,
    /// Builder/Critic/Tester iteration cap.
    pub i_max: u32,
    pub refund_on_cancel: bool,
}

impl Default for Policy {
    fn default() -> Self {
        Self {
            k_max: 2,
            convergence_window: 20,
            tau: 0.4,
            strategist_cadence: 5,
            milestone_cadence: 15,
            tick_seconds: 30,
            i_max: 10,
            refund_on_cancel: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Phase0,
    Phase1,
    Phase2,
    Phase3,
    Halted,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Phase0 => "phase0",
            Phase::Phase1 => "phase1",
            Phase::Phase2 => "phase2",
            Phase::Phase3 => "phase3",
            Phase::Halted => "halted",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignState {
    pub id: String,
    /// Directory the campaign lives in. Not journaled; re-attached on load.
    #[serde(skip)]
    pub workspace: std::path::PathBuf,
    pub budget_initial: u32,
    pub budget_remaining: u32,
    pub metric_spec: MetricSpec,
    pub analyzed_count: u32,
    pub stall_count: u32,
    pub best_primary: Option<f64>,
    pub playbook_head: u32,
    pub phase: Phase,
    pub policy: Policy,
    pub accepted_proposals: u32,
    pub strategist_turns: u32,
    pub milestones: u32,
    pub interventions: u32,
    pub halt_reason: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaybookAuthor {
    Strategist,
    Supervisor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlaybookVersion {
    pub seq: u32,
    pub content: String,
    pub author: PlaybookAuthor,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub id: ExperimentId,
    pub name: String,
    pub hypothesis: String,
    pub priority_hint: Option<i64>,
    pub state: LifecycleState,
    pub fix_attempts: u32,
    pub metrics: BTreeMap<String, MetricRecord>,
    /// Reasons the experiment must not be ranked (non-finite metrics and the like).
    pub flags: Vec<String>,
    pub worker_id: Option<String>,
    pub job: Option<JobHandle>,
    pub job_attempts: u32,
    pub created_at: Timestamp,
    pub updated_at: Timestamp,
    pub analyzed_at: Option<Timestamp>,
    pub cancel_reason: Option<String>,
}

impl Experiment {
    pub fn new(id: ExperimentId, name: &str, hypothesis: &str, at: Timestamp) -> Self {
        Self {
            id,
            name: name.to_string(),
            hypothesis: hypothesis.to_string(),
            priority_hint: None,
            state: LifecycleState::ToImplement,
            fix_attempts: 0,
            metrics: BTreeMap::new(),
            flags: Vec::new(),
            worker_id: None,
            job: None,
            job_attempts: 0,
            created_at: at,
            updated_at: at,
            analyzed_at: None,
            cancel_reason: None,
        }
    }

    pub fn is_flagged(&self) -> bool {
        !self.flags.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Fix,
    Analyze,
    Implement,
}

impl TaskKind {
    /// Higher is more urgent.
    pub fn priority(self) -> u8 {
        match self {
            TaskKind::Fix => 3,
            TaskKind::Analyze => 2,
            TaskKind::Implement => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Fix => "fix",
            TaskKind::Analyze => "analyze",
            TaskKind::Implement => "implement",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskAction {
    Created,
    Assigned,
    Completed,
    Dropped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalOutcome {
    Accepted,
    BudgetExhausted,
    DuplicateName,
    WrongPhase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub seq: u64,
    pub message: String,
    pub at: Timestamp,
}

/// What a journal record says happened. The `kind` tag is the record kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventPayload {
    CampaignStarted {
        id: String,
        budget: u32,
        metric_spec: MetricSpec,
        policy: Policy,
    },
    Phase {
        phase: Phase,
    },
    Proposal {
        experiment: Option<ExperimentId>,
        name: String,
        hypothesis: String,
        priority_hint: Option<i64>,
        outcome: ProposalOutcome,
    },
    Transition {
        experiment: ExperimentId,
        from: LifecycleState,
        to: LifecycleState,
        event: LifecycleEvent,
        worker: Option<String>,
    },
    Metric {
        experiment: ExperimentId,
        record: MetricRecord,
        flagged: bool,
    },
    Cancel {
        experiment: ExperimentId,
        from: LifecycleState,
        reason: String,
        refunded: bool,
    },
    Playbook {
        version: PlaybookVersion,
    },
    StrategistTurn {
        turn: u32,
        session: String,
        analyzed_count: u32,
        budget_remaining: u32,
        band: String,
        accepted: u32,
        rejected: u32,
        cancelled: u32,
        consumed_chat: Vec<u64>,
    },
    Milestone {
        number: u32,
        analyzed_count: u32,
        path: String,
    },
    Supervisor {
        number: u32,
        failure_rate: f64,
        session: String,
        patch_applied: bool,
        checkpoint: Option<u32>,
        record_path: String,
    },
    Job {
        experiment: ExperimentId,
        handle: JobHandle,
    },
    Task {
        action: TaskAction,
        task: TaskKind,
        experiment: ExperimentId,
        worker: Option<String>,
    },
    Chat {
        message: String,
    },
    Warning {
        message: String,
    },
    Halted {
        reason: String,
    },
}

impl EventPayload {
    pub fn kind(&self) -> &'static str {
        match self {
            EventPayload::CampaignStarted { .. } => "campaign_started",
            EventPayload::Phase { .. } => "phase",
            EventPayload::Proposal { .. } => "proposal",
            EventPayload::Transition { .. } => "transition",
            EventPayload::Metric { .. } => "metric",
            EventPayload::Cancel { .. } => "cancel",
            EventPayload::Playbook { .. } => "playbook",
            EventPayload::StrategistTurn { .. } => "strategist_turn",
            EventPayload::Milestone { .. } => "milestone",
            EventPayload::Supervisor { .. } => "supervisor",
            EventPayload::Job { .. } => "job",
            EventPayload::Task { .. } => "task",
            EventPayload::Chat { .. } => "chat",
            EventPayload::Warning { .. } => "warning",
            EventPayload::Halted { .. } => "halted",
        }
    }

    pub fn experiment(&self) -> Option<&ExperimentId> {
        match self {
            EventPayload::Proposal { experiment, .. } => experiment.as_ref(),
            EventPayload::Transition { experiment, .. }
            | EventPayload::Metric { experiment, .. }
            | EventPayload::Cancel { experiment, .. }
            | EventPayload::Job { experiment, .. }
            | EventPayload::Task { experiment, .. } => Some(experiment),
            _ => None,
        }
    }
}

/// One line of the board journal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardEvent {
    pub seq: u64,
    pub at: Timestamp,
    #[serde(flatten)]
    pub payload: EventPayload,
}
