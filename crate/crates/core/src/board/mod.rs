//! The experiment board: the campaign's durable state.
//!
//! Every mutation is expressed as an [`EventPayload`], validated against the
//! current state, stamped with a sequence number and applied through a single
//! `apply` function. Replaying the journal through the same function rebuilds
//! the board, so persistence is nothing more than writing the event list out.

pub mod finite;
pub mod journal;
pub mod lifecycle;
mod shared;
mod types;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::cluster::JobHandle;

pub use shared::SharedBoard;
pub use types::*;

#[derive(Debug, Error)]
pub enum BoardError {
    #[error("illegal transition for {experiment}: `{event}` is not allowed from `{from}`")]
    IllegalTransition {
        experiment: ExperimentId,
        from: LifecycleState,
        event: LifecycleEvent,
    },
    #[error("{experiment} is in terminal state `{state}` and cannot change")]
    TerminalMutation {
        experiment: ExperimentId,
        state: LifecycleState,
    },
    #[error("unknown experiment {0}")]
    UnknownExperiment(ExperimentId),
    #[error("metric `{0}` is not defined for this campaign")]
    UnknownMetric(String),
    #[error("non-finite value {value} for metric `{name}` on {experiment}; experiment flagged")]
    NonFiniteValue {
        experiment: ExperimentId,
        name: String,
        value: f64,
    },
    #[error("metrics cannot be recorded while {experiment} is `{state}`")]
    MetricNotAllowed {
        experiment: ExperimentId,
        state: LifecycleState,
    },
    #[error("playbook content is empty")]
    EmptyContent,
    #[error("journal is corrupt at line {line}: {reason}")]
    CorruptJournal { line: usize, reason: String },
    #[error("journal does not start with a campaign_started record")]
    NotStarted,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A leaderboard entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub rank: usize,
    pub experiment: ExperimentId,
    pub name: String,
    pub value: f64,
    pub analyzed_at: Option<Timestamp>,
}

/// Result of a proposal, as the strategist sees it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalResult {
    pub outcome: ProposalOutcome,
    pub experiment: Option<ExperimentId>,
}

impl ProposalResult {
    pub fn accepted(&self) -> bool {
        self.outcome == ProposalOutcome::Accepted
    }
}

/// Read-only export of the board (`board_snapshot.json`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoardSnapshot {
    pub last_seq: u64,
    pub campaign: CampaignState,
    pub experiments: Vec<Experiment>,
    pub playbook: Vec<PlaybookVersion>,
    pub chat: Vec<ChatMessage>,
    pub leaderboard: Vec<LeaderboardRow>,
}

/// Folds one analyzed experiment into the convergence counters.
///
/// `primary` is the experiment's full-scope primary metric, if it has a finite
/// one. Only a strictly better value resets the stall counter.
pub fn note_analyzed(campaign: &CampaignState, primary: Option<f64>) -> CampaignState {
    let mut next = campaign.clone();
    next.analyzed_count += 1;
    let improved = match (primary.filter(|v| v.is_finite()), campaign.best_primary) {
        (Some(v), None) => Some(v),
        (Some(v), Some(best)) if campaign.metric_spec.direction.improves(v, best) => Some(v),
        _ => None,
    };
    match improved {
        Some(v) => {
            next.best_primary = Some(v);
            next.stall_count = 0;
        }
        None => next.stall_count += 1,
    }
    next
}

#[derive(Debug, Clone, PartialEq)]
pub struct Board {
    campaign: CampaignState,
    experiments: Vec<Experiment>,
    index: HashMap<ExperimentId, usize>,
    playbook: Vec<PlaybookVersion>,
    chat: Vec<ChatMessage>,
    events: Vec<BoardEvent>,
}

impl Board {
    pub fn new(
        id: &str,
        budget: u32,
        metric_spec: MetricSpec,
        policy: Policy,
        at: Timestamp,
    ) -> Self {
        let mut board = Board {
            campaign: CampaignState {
                id: id.to_string(),
                workspace: Default::default(),
                budget_initial: 0,
                budget_remaining: 0,
                metric_spec: metric_spec.clone(),
                analyzed_count: 0,
                stall_count: 0,
                best_primary: None,
                playbook_head: 0,
                phase: Phase::Phase0,
                policy: policy.clone(),
                accepted_proposals: 0,
                strategist_turns: 0,
                milestones: 0,
                interventions: 0,
                halt_reason: None,
            },
            experiments: Vec::new(),
            index: HashMap::new(),
            playbook: Vec::new(),
            chat: Vec::new(),
            events: Vec::new(),
        };
        board.commit(
            at,
            EventPayload::CampaignStarted {
                id: id.to_string(),
                budget,
                metric_spec,
                policy,
            },
        );
        board
    }

    /// Rebuilds a board from its journal.
    pub fn replay(events: impl IntoIterator<Item = BoardEvent>) -> Result<Self, BoardError> {
        let mut iter = events.into_iter();
        let first = iter.next().ok_or(BoardError::NotStarted)?;
        let EventPayload::CampaignStarted {
            id,
            budget,
            metric_spec,
            policy,
        } = &first.payload
        else {
            return Err(BoardError::NotStarted);
        };
        let mut board = Board::new(id, *budget, metric_spec.clone(), policy.clone(), first.at);
        board.events[0] = first.clone();
        for (i, ev) in iter.enumerate() {
            let expected = board.next_seq();
            if ev.seq != expected {
                return Err(BoardError::CorruptJournal {
                    line: i + 2,
                    reason: format!("sequence {} where {} was expected", ev.seq, expected),
                });
            }
            board.apply(&ev);
            board.events.push(ev);
        }
        Ok(board)
    }

    pub fn campaign(&self) -> &CampaignState {
        &self.campaign
    }

    pub fn set_workspace(&mut self, path: impl Into<std::path::PathBuf>) {
        self.campaign.workspace = path.into();
    }

    pub fn experiments(&self) -> &[Experiment] {
        &self.experiments
    }

    pub fn experiment(&self, id: &ExperimentId) -> Option<&Experiment> {
        self.index.get(id).map(|&i| &self.experiments[i])
    }

    pub fn experiment_by_name(&self, name: &str) -> Option<&Experiment> {
        self.experiments.iter().find(|e| e.name == name)
    }

    pub fn playbook(&self) -> &[PlaybookVersion] {
        &self.playbook
    }

    pub fn playbook_head(&self) -> Option<&PlaybookVersion> {
        self.playbook.last()
    }

    pub fn chat(&self) -> &[ChatMessage] {
        &self.chat
    }

    pub fn events(&self) -> &[BoardEvent] {
        &self.events
    }

    pub fn last_seq(&self) -> u64 {
        self.events.last().map(|e| e.seq).unwrap_or(0)
    }

    fn next_seq(&self) -> u64 {
        self.last_seq() + 1
    }

    pub fn is_halted(&self) -> bool {
        self.campaign.phase == Phase::Halted
    }

    pub fn in_state(&self, state: LifecycleState) -> impl Iterator<Item = &Experiment> {
        self.experiments.iter().filter(move |e| e.state == state)
    }

    pub fn all_terminal(&self) -> bool {
        self.experiments.iter().all(|e| e.state.is_terminal())
    }

    fn commit(&mut self, at: Timestamp, payload: EventPayload) -> &BoardEvent {
        let ev = BoardEvent {
            seq: self.next_seq(),
            at,
            payload,
        };
        self.apply(&ev);
        self.events.push(ev);
        self.events.last().expect("just pushed")
    }

    fn exp_mut(&mut self, id: &ExperimentId) -> &mut Experiment {
        let i = self.index[id];
        &mut self.experiments[i]
    }

    fn primary_full(&self, exp: &Experiment) -> Option<f64> {
        exp.metrics
            .get(&self.campaign.metric_spec.primary)
            .filter(|m| m.scope == MetricScope::Full && m.value.is_finite())
            .map(|m| m.value)
    }

    fn apply(&mut self, ev: &BoardEvent) {
        let at = ev.at;
        match &ev.payload {
            EventPayload::CampaignStarted { budget, .. } => {
                self.campaign.budget_initial = *budget;
                self.campaign.budget_remaining = *budget;
            }
            EventPayload::Phase { phase } => self.campaign.phase = *phase,
            EventPayload::Proposal {
                experiment: Some(id),
                name,
                hypothesis,
                priority_hint,
                outcome: ProposalOutcome::Accepted,
            } => {
                let mut exp = Experiment::new(id.clone(), name, hypothesis, at);
                exp.priority_hint = *priority_hint;
                self.index.insert(id.clone(), self.experiments.len());
                self.experiments.push(exp);
                self.campaign.budget_remaining = self.campaign.budget_remaining.saturating_sub(1);
                self.campaign.accepted_proposals += 1;
            }
            EventPayload::Proposal { .. } => {}
            EventPayload::Transition {
                experiment,
                from,
                to,
                worker,
                ..
            } => {
                let exp = self.exp_mut(experiment);
                if *from == LifecycleState::Failed && *to == LifecycleState::Implementing {
                    exp.fix_attempts += 1;
                }
                if *to == LifecycleState::Running {
                    exp.job_attempts += 1;
                }
                if let Some(w) = worker {
                    exp.worker_id = Some(w.clone());
                }
                exp.state = *to;
                exp.updated_at = at;
                if *to == LifecycleState::Analyzed {
                    exp.analyzed_at = Some(at);
                    let exp = self.experiment(experiment).expect("indexed").clone();
                    let primary = self.primary_full(&exp);
                    self.campaign = note_analyzed(&self.campaign, primary);
                }
            }
            EventPayload::Metric {
                experiment,
                record,
                flagged,
            } => {
                let exp = self.exp_mut(experiment);
                if *flagged {
                    let flag = format!("non_finite:{}", record.name);
                    if !exp.flags.contains(&flag) {
                        exp.flags.push(flag);
                    }
                }
                exp.metrics.insert(record.name.clone(), record.clone());
                exp.updated_at = at;
            }
            EventPayload::Cancel {
                experiment,
                reason,
                refunded,
                ..
            } => {
                let exp = self.exp_mut(experiment);
                exp.state = LifecycleState::Cancelled;
                exp.cancel_reason = Some(reason.clone());
                exp.updated_at = at;
                if *refunded {
                    self.campaign.budget_remaining =
                        (self.campaign.budget_remaining + 1).min(self.campaign.budget_initial);
                }
            }
            EventPayload::Playbook { version } => {
                self.campaign.playbook_head = version.seq;
                self.playbook.push(version.clone());
            }
            EventPayload::StrategistTurn { turn, .. } => self.campaign.strategist_turns = *turn,
            EventPayload::Milestone { number, .. } => self.campaign.milestones = *number,
            EventPayload::Supervisor { number, .. } => self.campaign.interventions = *number,
            EventPayload::Job { experiment, handle } => {
                let exp = self.exp_mut(experiment);
                exp.job = Some(handle.clone());
                exp.updated_at = at;
            }
            EventPayload::Task {
                action: TaskAction::Assigned,
                experiment,
                worker: Some(w),
                ..
            } => {
                self.exp_mut(experiment).worker_id = Some(w.clone());
            }
            EventPayload::Task { .. } => {}
            EventPayload::Chat { message } => self.chat.push(ChatMessage {
                seq: ev.seq,
                message: message.clone(),
                at,
            }),
            EventPayload::Warning { .. } => {}
            EventPayload::Halted { reason } => {
                self.campaign.phase = Phase::Halted;
                self.campaign.halt_reason = Some(reason.clone());
            }
        }
    }

    // ---- operations ----

    pub fn set_phase(&mut self, phase: Phase, at: Timestamp) {
        if self.campaign.phase != phase {
            self.commit(at, EventPayload::Phase { phase });
        }
    }

    /// Accepts a new experiment if budget remains and the name is unused.
    /// Rejections are journaled too.
    pub fn propose(
        &mut self,
        name: &str,
        hypothesis: &str,
        priority_hint: Option<i64>,
        at: Timestamp,
    ) -> ProposalResult {
        let outcome = if self.campaign.phase != Phase::Phase3 {
            ProposalOutcome::WrongPhase
        } else if self.campaign.budget_remaining == 0 {
            ProposalOutcome::BudgetExhausted
        } else if self.experiment_by_name(name).is_some() {
            ProposalOutcome::DuplicateName
        } else {
            ProposalOutcome::Accepted
        };
        let experiment = (outcome == ProposalOutcome::Accepted)
            .then(|| ExperimentId::from_index(self.experiments.len() as u32 + 1));
        self.commit(
            at,
            EventPayload::Proposal {
                experiment: experiment.clone(),
                name: name.to_string(),
                hypothesis: hypothesis.to_string(),
                priority_hint,
                outcome,
            },
        );
        ProposalResult {
            outcome,
            experiment,
        }
    }

    pub fn transition(
        &mut self,
        id: &ExperimentId,
        event: LifecycleEvent,
        worker: Option<String>,
        at: Timestamp,
    ) -> Result<&Experiment, BoardError> {
        let exp = self
            .experiment(id)
            .ok_or_else(|| BoardError::UnknownExperiment(id.clone()))?;
        if event == LifecycleEvent::Cancel {
            self.cancel(id, "cancelled", at)?;
            return Ok(self.experiment(id).expect("exists"));
        }
        let from = exp.state;
        let next = lifecycle::transition(exp, event, self.campaign.policy.k_max)?;
        self.commit(
            at,
            EventPayload::Transition {
                experiment: id.clone(),
                from,
                to: next.state,
                event,
                worker,
            },
        );
        Ok(self.experiment(id).expect("exists"))
    }

    /// Cancels a non-terminal experiment. Returns the state it was in.
    pub fn cancel(
        &mut self,
        id: &ExperimentId,
        reason: &str,
        at: Timestamp,
    ) -> Result<LifecycleState, BoardError> {
        let exp = self
            .experiment(id)
            .ok_or_else(|| BoardError::UnknownExperiment(id.clone()))?;
        let from = exp.state;
        lifecycle::transition(exp, LifecycleEvent::Cancel, self.campaign.policy.k_max)?;
        let refunded = self.campaign.policy.refund_on_cancel
            && !matches!(from, LifecycleState::Running | LifecycleState::Finished);
        self.commit(
            at,
            EventPayload::Cancel {
                experiment: id.clone(),
                from,
                reason: reason.to_string(),
                refunded,
            },
        );
        Ok(from)
    }

    /// Stores a metric value.
    ///
    /// Non-finite values are stored and the experiment is flagged; the call
    /// then reports [`BoardError::NonFiniteValue`] so the caller knows the
    /// experiment will not be ranked.
    pub fn record_metric(
        &mut self,
        id: &ExperimentId,
        name: &str,
        value: f64,
        scope: MetricScope,
        at: Timestamp,
    ) -> Result<&Experiment, BoardError> {
        let exp = self
            .experiment(id)
            .ok_or_else(|| BoardError::UnknownExperiment(id.clone()))?;
        if !matches!(
            exp.state,
            LifecycleState::Finished | LifecycleState::Analyzed | LifecycleState::Checked
        ) {
            return Err(BoardError::MetricNotAllowed {
                experiment: id.clone(),
                state: exp.state,
            });
        }
        let def = self
            .campaign
            .metric_spec
            .get(name)
            .ok_or_else(|| BoardError::UnknownMetric(name.to_string()))?;
        let flagged = !value.is_finite();
        let record = MetricRecord {
            name: name.to_string(),
            value,
            direction: def.direction,
            scope,
            recorded_at: at,
        };
        self.commit(
            at,
            EventPayload::Metric {
                experiment: id.clone(),
                record,
                flagged,
            },
        );
        if flagged {
            return Err(BoardError::NonFiniteValue {
                experiment: id.clone(),
                name: name.to_string(),
                value,
            });
        }
        Ok(self.experiment(id).expect("exists"))
    }

    pub fn append_playbook(
        &mut self,
        content: &str,
        author: PlaybookAuthor,
        at: Timestamp,
    ) -> Result<PlaybookVersion, BoardError> {
        if content.trim().is_empty() {
            return Err(BoardError::EmptyContent);
        }
        let version = PlaybookVersion {
            seq: self.campaign.playbook_head + 1,
            content: content.to_string(),
            author,
            created_at: at,
        };
        self.commit(
            at,
            EventPayload::Playbook {
                version: version.clone(),
            },
        );
        Ok(version)
    }

    pub fn set_job(&mut self, id: &ExperimentId, handle: JobHandle, at: Timestamp) {
        if self.experiment(id).is_some() {
            self.commit(
                at,
                EventPayload::Job {
                    experiment: id.clone(),
                    handle,
                },
            );
        }
    }

    pub fn record_task(
        &mut self,
        action: TaskAction,
        task: TaskKind,
        experiment: &ExperimentId,
        worker: Option<String>,
        at: Timestamp,
    ) {
        self.commit(
            at,
            EventPayload::Task {
                action,
                task,
                experiment: experiment.clone(),
                worker,
            },
        );
    }

    pub fn post_chat(&mut self, message: &str, at: Timestamp) -> u64 {
        self.commit(
            at,
            EventPayload::Chat {
                message: message.to_string(),
            },
        )
        .seq
    }

    pub fn record(&mut self, payload: EventPayload, at: Timestamp) -> u64 {
        self.commit(at, payload).seq
    }

    pub fn halt(&mut self, reason: &str, at: Timestamp) {
        if !self.is_halted() {
            self.commit(
                at,
                EventPayload::Halted {
                    reason: reason.to_string(),
                },
            );
        }
    }

    /// Ranked analyzed experiments with a finite, full-scope primary metric.
    /// Ties keep the earlier-analyzed experiment first.
    pub fn leaderboard(&self, top_k: Option<usize>) -> Vec<LeaderboardRow> {
        let direction = self.campaign.metric_spec.direction;
        let mut rows: Vec<(&Experiment, f64)> = self
            .experiments
            .iter()
            .filter(|e| matches!(e.state, LifecycleState::Analyzed | LifecycleState::Done))
            .filter(|e| !e.is_flagged())
            .filter_map(|e| self.primary_full(e).map(|v| (e, v)))
            .collect();
        rows.sort_by(|(ea, a), (eb, b)| {
            direction
                .rank(*a, *b)
                .then(ea.analyzed_at.cmp(&eb.analyzed_at))
                .then(ea.id.cmp(&eb.id))
        });
        rows.into_iter()
            .take(top_k.unwrap_or(usize::MAX))
            .enumerate()
            .map(|(i, (e, v))| LeaderboardRow {
                rank: i + 1,
                experiment: e.id.clone(),
                name: e.name.clone(),
                value: v,
                analyzed_at: e.analyzed_at,
            })
            .collect()
    }

    pub fn snapshot(&self) -> BoardSnapshot {
        BoardSnapshot {
            last_seq: self.last_seq(),
            campaign: self.campaign.clone(),
            experiments: self.experiments.clone(),
            playbook: self.playbook.clone(),
            chat: self.chat.clone(),
            leaderboard: self.leaderboard(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn board(direction: Direction) -> Board {
        let mut spec = MetricSpec::single("val_bpb", direction);
        spec.metrics.push(MetricDef {
            name: "tokens_per_s".into(),
            direction: Direction::Max,
            primary: false,
        });
        let mut b = Board::new("c1", 50, spec, Policy::default(), 0);
        b.set_phase(Phase::Phase3, 0);
        b
    }

    fn to_finished(b: &mut Board, name: &str) -> ExperimentId {
        let id = b.propose(name, "h", None, 1).experiment.unwrap();
        for ev in [
            LifecycleEvent::Assign,
            LifecycleEvent::CodeWritten,
            LifecycleEvent::CheckPassed,
            LifecycleEvent::Enqueue,
            LifecycleEvent::JobLaunched,
            LifecycleEvent::JobSucceeded,
        ] {
            b.transition(&id, ev, None, 2).unwrap();
        }
        id
    }

    fn analyze(b: &mut Board, name: &str, value: f64, at: Timestamp) -> ExperimentId {
        let id = to_finished(b, name);
        let _ = b.record_metric(&id, "val_bpb", value, MetricScope::Full, at);
        b.transition(&id, LifecycleEvent::DebriefWritten, None, at)
            .unwrap();
        id
    }

    #[test]
    fn full_metric_is_ranked_smoke_is_not() {
        let mut b = board(Direction::Min);
        let a = to_finished(&mut b, "a");
        b.record_metric(&a, "val_bpb", 0.7578, MetricScope::Full, 3)
            .unwrap();
        b.transition(&a, LifecycleEvent::DebriefWritten, None, 4)
            .unwrap();
        let s = to_finished(&mut b, "s");
        b.record_metric(&s, "val_bpb", 8.0, MetricScope::Smoke, 3)
            .unwrap();
        b.transition(&s, LifecycleEvent::DebriefWritten, None, 4)
            .unwrap();
        let rows = b.leaderboard(None);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].experiment, a);
        assert_eq!(rows[0].value, 0.7578);
        assert_eq!(
            b.experiment(&s).unwrap().metrics["val_bpb"].scope,
            MetricScope::Smoke
        );
    }

    #[test]
    fn nan_metric_is_stored_flagged_and_unranked() {
        let mut b = board(Direction::Min);
        let id = to_finished(&mut b, "broken");
        let err = b
            .record_metric(&id, "val_bpb", f64::NAN, MetricScope::Full, 3)
            .unwrap_err();
        assert!(matches!(err, BoardError::NonFiniteValue { .. }));
        let exp = b.experiment(&id).unwrap();
        assert!(exp.is_flagged());
        assert!(exp.metrics["val_bpb"].value.is_nan());
        b.transition(&id, LifecycleEvent::DebriefWritten, None, 4)
            .unwrap();
        assert!(b.leaderboard(None).is_empty());
    }

    #[test]
    fn unknown_metric_and_wrong_state_are_rejected() {
        let mut b = board(Direction::Min);
        let id = to_finished(&mut b, "a");
        assert!(matches!(
            b.record_metric(&id, "accuracy", 1.0, MetricScope::Full, 3),
            Err(BoardError::UnknownMetric(_))
        ));
        let q = b.propose("q", "h", None, 1).experiment.unwrap();
        assert!(matches!(
            b.record_metric(&q, "val_bpb", 1.0, MetricScope::Full, 3),
            Err(BoardError::MetricNotAllowed { .. })
        ));
    }

    #[test]
    fn leaderboard_orders_by_direction() {
        let mut b = board(Direction::Min);
        let a = analyze(&mut b, "A", 0.02204, 10);
        let bb = analyze(&mut b, "B", 0.02142, 11);
        let rows = b.leaderboard(None);
        assert_eq!(
            rows.iter().map(|r| &r.experiment).collect::<Vec<_>>(),
            vec![&bb, &a]
        );

        let mut m = board(Direction::Max);
        let y = analyze(&mut m, "Y", 4.63, 10);
        let x = analyze(&mut m, "X", 5.17, 11);
        let rows = m.leaderboard(Some(5));
        assert_eq!(
            rows.iter().map(|r| &r.experiment).collect::<Vec<_>>(),
            vec![&x, &y]
        );
    }

    #[test]
    fn leaderboard_ties_prefer_earlier_analysis() {
        let mut b = board(Direction::Min);
        let late_id_first = analyze(&mut b, "first", 0.5, 20);
        let second = analyze(&mut b, "second", 0.5, 30);
        let rows = b.leaderboard(None);
        assert_eq!(rows[0].experiment, late_id_first);
        assert_eq!(rows[1].experiment, second);
        assert!(board(Direction::Min).leaderboard(None).is_empty());
    }

    #[test]
    fn note_analyzed_uses_strict_improvement() {
        let b = board(Direction::Min);
        let mut c = b.campaign().clone();
        c.best_primary = Some(0.98);
        let c = note_analyzed(&c, Some(0.97));
        assert_eq!((c.best_primary, c.stall_count), (Some(0.97), 0));
        let c = note_analyzed(&c, Some(0.97));
        assert_eq!((c.best_primary, c.stall_count), (Some(0.97), 1));
        let mut c = c;
        for _ in 0..19 {
            c = note_analyzed(&c, Some(1.5));
        }
        assert_eq!(c.stall_count, 20);
        assert_eq!(c.analyzed_count, 21);
    }

    #[test]
    fn playbook_versions_are_append_only() {
        let mut b = board(Direction::Min);
        assert!(matches!(
            b.append_playbook("  ", PlaybookAuthor::Strategist, 1),
            Err(BoardError::EmptyContent)
        ));
        let v1 = b
            .append_playbook("use bytes", PlaybookAuthor::Strategist, 1)
            .unwrap();
        let v2 = b
            .append_playbook("kwargs note", PlaybookAuthor::Supervisor, 2)
            .unwrap();
        assert_eq!((v1.seq, v2.seq), (1, 2));
        assert_eq!(b.playbook().len(), 2);
        assert_eq!(b.playbook_head().unwrap().content, "kwargs note");
        assert_eq!(b.playbook()[1].author, PlaybookAuthor::Supervisor);
    }

    #[test]
    fn proposals_spend_budget_and_reject_duplicates() {
        let spec = MetricSpec::single("rmse", Direction::Min);
        let mut b = Board::new("c", 1, spec, Policy::default(), 0);
        assert_eq!(
            b.propose("early", "h", None, 0).outcome,
            ProposalOutcome::WrongPhase
        );
        b.set_phase(Phase::Phase3, 0);
        assert!(b.propose("one", "h", None, 1).accepted());
        assert_eq!(b.campaign().budget_remaining, 0);
        assert_eq!(
            b.propose("two", "h", None, 2).outcome,
            ProposalOutcome::BudgetExhausted
        );
        let mut b = board(Direction::Min);
        b.propose("x", "h", None, 1);
        assert_eq!(
            b.propose("x", "h", None, 1).outcome,
            ProposalOutcome::DuplicateName
        );
    }

    #[test]
    fn cancellation_does_not_refund_by_default() {
        let mut b = board(Direction::Min);
        let id = b.propose("x", "h", None, 1).experiment.unwrap();
        assert_eq!(b.campaign().budget_remaining, 49);
        b.cancel(&id, "not promising", 2).unwrap();
        assert_eq!(b.campaign().budget_remaining, 49);
        assert_eq!(b.experiment(&id).unwrap().state, LifecycleState::Cancelled);
        assert!(matches!(
            b.cancel(&id, "again", 3),
            Err(BoardError::TerminalMutation { .. })
        ));
    }

    #[test]
    fn illegal_transition_leaves_state_unchanged() {
        let mut b = board(Direction::Min);
        let id = b.propose("x", "h", None, 1).experiment.unwrap();
        let before = b.clone();
        assert!(b.transition(&id, LifecycleEvent::JobLaunched, None, 5).is_err());
        assert_eq!(b, before);
    }

    #[test]
    fn replay_reconstructs_the_board() {
        let mut b = board(Direction::Min);
        analyze(&mut b, "A", 0.3, 10);
        to_finished(&mut b, "B");
        b.append_playbook("p", PlaybookAuthor::Strategist, 12).unwrap();
        let back = Board::replay(b.events().to_vec()).unwrap();
        assert_eq!(back, b);
    }
}
