//! The phase 3 control loop.
//!
//! Each tick polls jobs, submits checked experiments, hands tasks to free
//! workers by priority, runs the strategist, reporter and supervisor when
//! they are due, and decides whether to halt. The dispatcher never talks to
//! a model itself; every model call goes through a [`Runtime`] session.

mod bands;
mod queue;
mod strategist;
mod worker;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adapter::{context_for, AdapterBundle, ContextDoc, Role};
use crate::agent::{AgentSession, Runtime, SessionRequest};
use crate::board::{
    Board, BoardEvent, EventPayload, ExperimentId, LifecycleEvent, LifecycleState, MetricScope, Phase, SharedBoard,
    TaskAction, TaskKind,
};
use crate::clock::SharedClock;
use crate::cluster::{Cluster, JobPriority, JobSpec, JobState};
use crate::supervisor::{collect_failures, intervene, HealthMonitor, SupervisorConfig, LEARNINGS_FILE};
use crate::tools::{board_digest, Payload};

pub use bands::{budget_band, BudgetBand};
pub use queue::{next_task, Task, TaskQueue};
pub use strategist::{
    apply_strategist_output, parse_strategist_report, ApplyReport, Cancellation, ProposalSpec, StrategistOutput,
};
pub use worker::{
    experiment_dir, latest_log, parse_status, read_metrics_file, task_doc, WorkerStatus, DEBRIEF, EXPERIMENTS_DIR,
    METRICS, SMOKE_METRICS,
};

/// Operator halt request: a file with this name in the workspace.
pub const HALT_FILE: &str = "HALT";
pub const MILESTONE_DIR: &str = "reports";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DispatcherConfig {
    /// Concurrent worker slots.
    pub workers: usize,
    /// Run a tick's worker sessions on threads. Results are applied in
    /// assignment order either way.
    pub parallel_sessions: bool,
    /// Hard stop for runaway loops.
    pub max_ticks: u64,
    /// Invoke the strategist when budget remains but nothing is in flight.
    pub starvation_guard: bool,
    pub supervisor: SupervisorConfig,
}

impl Default for DispatcherConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            parallel_sessions: false,
            max_ticks: 100_000,
            starvation_guard: true,
            supervisor: SupervisorConfig::default(),
        }
    }
}

/// Something a tick did.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Transition {
        experiment: ExperimentId,
        from: LifecycleState,
        to: LifecycleState,
    },
    TaskCreated {
        task: TaskKind,
        experiment: ExperimentId,
    },
    TaskAssigned {
        task: TaskKind,
        experiment: ExperimentId,
        worker: String,
    },
    JobSubmitted {
        experiment: ExperimentId,
        job: String,
    },
    StrategistTurn {
        turn: u32,
        trigger: TurnTrigger,
    },
    Milestone {
        number: u32,
    },
    Intervention {
        number: u32,
    },
    Halted {
        reason: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnTrigger {
    Initial,
    Cadence,
    Starvation,
    Flush,
}

/// Halt rule: `stall_count >= C`, or no budget left and every experiment terminal.
pub fn converged(board: &Board) -> bool {
    let c = board.campaign();
    c.stall_count >= c.policy.convergence_window || (c.budget_remaining == 0 && board.all_terminal())
}

/// Whether the strategist is due on cadence: one turn per `cadence` analyzed
/// experiments, counting the initial turn.
pub fn cadence_due(analyzed: u32, turns: u32, cadence: u32) -> bool {
    turns == 0 || analyzed / cadence.max(1) >= turns
}

/// Whether reporter milestones are owed.
pub fn milestone_due(analyzed: u32, milestones: u32, cadence: u32) -> bool {
    milestones < analyzed / cadence.max(1)
}

fn in_flight(state: LifecycleState) -> bool {
    !state.is_terminal() && state != LifecycleState::Analyzed
}

pub struct Dispatcher {
    board: SharedBoard,
    cluster: Cluster,
    runtime: Arc<Runtime>,
    bundle: AdapterBundle,
    workspace: PathBuf,
    clock: SharedClock,
    queue: TaskQueue,
    monitor: HealthMonitor,
    config: DispatcherConfig,
    ticks: u64,
    converged_now: bool,
    starved: bool,
}

impl Dispatcher {
    /// Takes over a board in phase 3. Pending tasks are rebuilt from the
    /// journal; work that was mid-flight when the previous process stopped
    /// is failed so the fix path picks it up.
    pub fn new(
        board: SharedBoard,
        cluster: Cluster,
        runtime: Arc<Runtime>,
        bundle: AdapterBundle,
        workspace: impl Into<PathBuf>,
        clock: SharedClock,
        config: DispatcherConfig,
    ) -> Self {
        let mut d = Self {
            monitor: HealthMonitor::new(&config.supervisor),
            board,
            cluster,
            runtime,
            bundle,
            workspace: workspace.into(),
            clock,
            queue: TaskQueue::new(),
            config,
            ticks: 0,
            converged_now: false,
            starved: false,
        };
        d.rebuild_queue();
        d.recover();
        d.board.write(|b| b.set_phase(Phase::Phase3, d.clock.now()));
        d
    }

    pub fn board(&self) -> &SharedBoard {
        &self.board
    }

    pub fn cluster(&self) -> &Cluster {
        &self.cluster
    }

    pub fn bundle(&self) -> &AdapterBundle {
        &self.bundle
    }

    pub fn into_bundle(self) -> AdapterBundle {
        self.bundle
    }

    pub fn queue(&self) -> &TaskQueue {
        &self.queue
    }

    pub fn monitor(&self) -> &HealthMonitor {
        &self.monitor
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    pub fn is_halted(&self) -> bool {
        self.board.read(|b| b.is_halted())
    }

    fn rebuild_queue(&mut self) {
        let events: Vec<BoardEvent> = self.board.read(|b| b.events().to_vec());
        for ev in events {
            if let EventPayload::Task { action, task, experiment, .. } = ev.payload {
                match action {
                    TaskAction::Created => {
                        self.queue.push(task, experiment, ev.at);
                    }
                    TaskAction::Assigned | TaskAction::Dropped => {
                        self.queue.remove(&experiment);
                    }
                    TaskAction::Completed => {}
                }
            }
        }
    }

    fn recover(&mut self) {
        let now = self.clock.now();
        let stuck: Vec<(ExperimentId, LifecycleState)> = self.board.read(|b| {
            b.experiments()
                .iter()
                .filter(|e| {
                    matches!(
                        e.state,
                        LifecycleState::Implementing
                            | LifecycleState::Implemented
                            | LifecycleState::Queued
                            | LifecycleState::Running
                    )
                })
                .map(|e| (e.id.clone(), e.state))
                .collect()
        });
        let mut actions = Vec::new();
        for (id, state) in stuck {
            let msg = format!("{id}: `{state}` work lost on restart");
            self.board.write(|b| b.record(EventPayload::Warning { message: msg }, now));
            match state {
                LifecycleState::Queued => {
                    self.step(&id, LifecycleEvent::JobLaunched, None, &mut actions);
                    self.step(&id, LifecycleEvent::JobFailed, None, &mut actions);
                }
                LifecycleState::Running => {
                    self.step(&id, LifecycleEvent::JobFailed, None, &mut actions);
                }
                _ => {
                    self.step(&id, LifecycleEvent::WorkerFailed, None, &mut actions);
                }
            }
        }
        self.reconcile(&mut actions);
    }

    /// Applies one lifecycle event, recording it as an action. Returns the new state.
    fn step(
        &self,
        id: &ExperimentId,
        event: LifecycleEvent,
        worker: Option<String>,
        actions: &mut Vec<Action>,
    ) -> Option<LifecycleState> {
        let now = self.clock.now();
        let from = self.board.read(|b| b.experiment(id).map(|e| e.state))?;
        match self.board.write(|b| b.transition(id, event, worker, now).map(|e| e.state)) {
            Ok(to) => {
                actions.push(Action::Transition {
                    experiment: id.clone(),
                    from,
                    to,
                });
                Some(to)
            }
            Err(e) => {
                log::error!("dispatcher transition rejected: {e}");
                None
            }
        }
    }

    fn warn(&self, message: String) {
        log::warn!("{message}");
        let now = self.clock.now();
        self.board.write(|b| b.record(EventPayload::Warning { message }, now));
    }

    /// Creates the tasks the board calls for: implement for new experiments,
    /// analyze for finished ones, fix (or the terminal transition) for failures.
    fn reconcile(&mut self, actions: &mut Vec<Action>) {
        let now = self.clock.now();
        let k_max = self.board.read(|b| b.campaign().policy.k_max);
        let candidates: Vec<(ExperimentId, LifecycleState, u32)> = self.board.read(|b| {
            b.experiments()
                .iter()
                .filter(|e| {
                    matches!(
                        e.state,
                        LifecycleState::ToImplement | LifecycleState::Finished | LifecycleState::Failed
                    )
                })
                .map(|e| (e.id.clone(), e.state, e.fix_attempts))
                .collect()
        });
        for (id, state, fix_attempts) in candidates {
            if self.queue.has_task_for(&id) {
                continue;
            }
            let kind = match state {
                LifecycleState::ToImplement => TaskKind::Implement,
                LifecycleState::Finished => TaskKind::Analyze,
                _ if fix_attempts < k_max => TaskKind::Fix,
                _ => {
                    self.step(&id, LifecycleEvent::Fix, None, actions);
                    continue;
                }
            };
            self.queue.push(kind, id.clone(), now);
            self.board.write(|b| b.record_task(TaskAction::Created, kind, &id, None, now));
            actions.push(Action::TaskCreated {
                task: kind,
                experiment: id,
            });
        }
    }

    /// One dispatcher tick. Returns what it did; an empty list means nothing changed.
    pub fn tick(&mut self) -> Vec<Action> {
        let mut actions = Vec::new();
        if self.is_halted() {
            return actions;
        }
        self.ticks += 1;
        self.poll_jobs(&mut actions);
        self.reconcile(&mut actions);
        self.enqueue(&mut actions);
        self.assign(&mut actions);
        self.reconcile(&mut actions);
        if !self.converged_now && self.board.read(|b| b.campaign().stall_count < b.campaign().policy.convergence_window)
            && let Some(trigger) = self.turn_trigger() {
                self.strategist_turn(trigger, &mut actions);
                self.reconcile(&mut actions);
                self.enqueue(&mut actions);
            }
        self.milestones(&mut actions);
        self.supervise(&mut actions);
        self.halt_check(&mut actions);
        actions
    }

    /// Ticks until the campaign halts, sleeping `tick_seconds` between ticks.
    pub fn run(&mut self) -> String {
        let tick_ms = self.board.read(|b| b.campaign().policy.tick_seconds) * 1000;
        while !self.is_halted() {
            self.tick();
            if self.is_halted() {
                break;
            }
            self.clock.sleep(tick_ms);
        }
        self.board.read(|b| b.campaign().halt_reason.clone().unwrap_or_default())
    }

    // ---- (1) jobs ----

    fn poll_jobs(&mut self, actions: &mut Vec<Action>) {
        let jobs: Vec<(ExperimentId, LifecycleState, String)> = self.board.read(|b| {
            b.experiments()
                .iter()
                .filter(|e| matches!(e.state, LifecycleState::Queued | LifecycleState::Running))
                .filter_map(|e| e.job.as_ref().map(|j| (e.id.clone(), e.state, j.id.clone())))
                .collect()
        });
        for (id, state, job) in jobs {
            let polled = match self.cluster.poll(&job) {
                Ok(s) => s,
                Err(e) => {
                    self.warn(format!("{id}: poll of {job} failed: {e}"));
                    JobState::Failed
                }
            };
            if polled == JobState::Pending {
                continue;
            }
            if state == LifecycleState::Queued {
                self.step(&id, LifecycleEvent::JobLaunched, None, actions);
            }
            if polled.is_terminal() {
                let event = if polled == JobState::Completed {
                    LifecycleEvent::JobSucceeded
                } else {
                    LifecycleEvent::JobFailed
                };
                self.step(&id, event, None, actions);
            }
            if polled != JobState::Running || state == LifecycleState::Queued {
                self.sync_handle(&id, &job);
            }
        }
    }

    fn sync_handle(&self, id: &ExperimentId, job: &str) {
        if let Some(h) = self.cluster.handle(job).cloned() {
            let now = self.clock.now();
            self.board.write(|b| b.set_job(id, h, now));
        }
    }

    // ---- (2) submission ----

    fn enqueue(&mut self, actions: &mut Vec<Action>) {
        let checked: Vec<(ExperimentId, String, u32)> = self.board.read(|b| {
            b.in_state(LifecycleState::Checked)
                .map(|e| (e.id.clone(), e.name.clone(), e.fix_attempts))
                .collect()
        });
        let structure = self.bundle.manifest.experiment_structure.clone();
        for (id, name, fix_attempts) in checked {
            if self.step(&id, LifecycleEvent::Enqueue, None, actions).is_none() {
                continue;
            }
            let env = BTreeMap::from([
                ("CAMPAIGN_EXPERIMENT".to_string(), name.clone()),
                ("CAMPAIGN_EXPERIMENT_ID".to_string(), id.to_string()),
                ("CAMPAIGN_WORKSPACE".to_string(), self.workspace.display().to_string()),
            ]);
            let spec = JobSpec {
                experiment: id.clone(),
                name: name.clone(),
                command: structure.run_command.clone(),
                workdir: self.workspace.join(experiment_dir(&name)),
                gpus_requested: structure.gpus_per_experiment.max(1),
                time_limit_s: structure.time_limit_s.max(1),
                env,
                priority: if fix_attempts > 0 { JobPriority::Fix } else { JobPriority::Normal },
            };
            match self.cluster.submit(spec) {
                Ok(handle) => {
                    let now = self.clock.now();
                    actions.push(Action::JobSubmitted {
                        experiment: id.clone(),
                        job: handle.id.clone(),
                    });
                    self.board.write(|b| b.set_job(&id, handle, now));
                }
                Err(e) => {
                    self.warn(format!("{id}: submit failed: {e}"));
                    self.step(&id, LifecycleEvent::JobLaunched, None, actions);
                    self.step(&id, LifecycleEvent::JobFailed, None, actions);
                }
            }
        }
    }

    // ---- (3) workers ----

    fn assign(&mut self, actions: &mut Vec<Action>) {
        let mut batch: Vec<(Task, String, Vec<ContextDoc>)> = Vec::new();
        let structure = self.bundle.manifest.experiment_structure.clone();
        for slot in 1..=self.config.workers {
            let Some(task) = self.queue.pop_next() else { break };
            let worker = format!("worker-{slot}");
            let now = self.clock.now();
            let state = self.board.read(|b| b.experiment(&task.experiment).map(|e| e.state));
            let ready = match (task.kind, state) {
                (TaskKind::Implement, Some(LifecycleState::ToImplement)) => {
                    self.step(&task.experiment, LifecycleEvent::Assign, Some(worker.clone()), actions)
                        == Some(LifecycleState::Implementing)
                }
                (TaskKind::Fix, Some(LifecycleState::Failed)) => {
                    self.step(&task.experiment, LifecycleEvent::Fix, Some(worker.clone()), actions)
                        == Some(LifecycleState::Implementing)
                }
                (TaskKind::Analyze, Some(LifecycleState::Finished)) => true,
                _ => false,
            };
            if !ready {
                self.board.write(|b| b.record_task(TaskAction::Dropped, task.kind, &task.experiment, None, now));
                continue;
            }
            self.board
                .write(|b| b.record_task(TaskAction::Assigned, task.kind, &task.experiment, Some(worker.clone()), now));
            actions.push(Action::TaskAssigned {
                task: task.kind,
                experiment: task.experiment.clone(),
                worker: worker.clone(),
            });
            let exp = self.board.read(|b| b.experiment(&task.experiment).cloned()).expect("exists");
            let mut extras = self.playbook_doc().into_iter().collect::<Vec<_>>();
            extras.extend(task_doc(task.kind, &exp, &structure, &self.workspace));
            batch.push((task, worker, context_for(&self.bundle, Role::Worker, extras)));
        }
        if batch.is_empty() {
            return;
        }
        let sessions: Vec<AgentSession> = if self.config.parallel_sessions && batch.len() > 1 {
            let runtime = &self.runtime;
            std::thread::scope(|s| {
                let handles: Vec<_> = batch
                    .iter()
                    .map(|(_, _, ctx)| s.spawn(move || runtime.run_session(SessionRequest::new(Role::Worker, ctx.clone()))))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("worker session panicked")).collect()
            })
        } else {
            batch
                .iter()
                .map(|(_, _, ctx)| self.runtime.run_session(SessionRequest::new(Role::Worker, ctx.clone())))
                .collect()
        };
        for ((task, worker, _), session) in batch.into_iter().zip(sessions) {
            let now = self.clock.now();
            if self.converged_now {
                self.board.write(|b| b.record_task(TaskAction::Dropped, task.kind, &task.experiment, Some(worker), now));
                continue;
            }
            self.apply_worker(&task, &worker, &session, actions);
            self.board
                .write(|b| b.record_task(TaskAction::Completed, task.kind, &task.experiment, Some(worker), now));
            if self.board.read(|b| b.campaign().stall_count >= b.campaign().policy.convergence_window) {
                self.converged_now = true;
            }
        }
    }

    fn apply_worker(&mut self, task: &Task, worker: &str, session: &AgentSession, actions: &mut Vec<Action>) {
        let id = &task.experiment;
        let Some(exp) = self.board.read(|b| b.experiment(id).cloned()) else { return };
        let dir = self.workspace.join(experiment_dir(&exp.name));
        let status = parse_status(session.report_text());
        let w = Some(worker.to_string());
        let fail = |d: &Self, reason: String, actions: &mut Vec<Action>| {
            d.warn(format!("{id}: {worker} could not finish {}: {reason}", task.kind.as_str()));
            d.step(id, LifecycleEvent::WorkerFailed, w.clone(), actions);
        };
        if !session.reported() {
            fail(self, format!("session ended {:?}", session.outcome).to_lowercase(), actions);
            return;
        }
        match task.kind {
            TaskKind::Implement | TaskKind::Fix => {
                let script = &self.bundle.manifest.experiment_structure.run_script;
                if !dir.join(script).is_file() {
                    fail(self, format!("{script} is missing"), actions);
                    return;
                }
                self.step(id, LifecycleEvent::CodeWritten, w.clone(), actions);
                let smoke = dir.join(SMOKE_METRICS);
                if status != Some(WorkerStatus::Checked) {
                    fail(self, "smoke test not declared passed".into(), actions);
                } else if !smoke.is_file() {
                    fail(self, format!("{SMOKE_METRICS} is missing"), actions);
                } else {
                    self.step(id, LifecycleEvent::CheckPassed, w.clone(), actions);
                    self.record_metrics(id, &smoke, MetricScope::Smoke);
                }
            }
            TaskKind::Analyze => {
                if !dir.join(DEBRIEF).is_file() {
                    fail(self, format!("{DEBRIEF} is missing"), actions);
                    return;
                }
                let metrics = dir.join(METRICS);
                if !metrics.is_file() {
                    fail(self, format!("{METRICS} is missing"), actions);
                    return;
                }
                self.record_metrics(id, &metrics, MetricScope::Full);
                self.step(id, LifecycleEvent::DebriefWritten, w, actions);
            }
        }
    }

    fn record_metrics(&self, id: &ExperimentId, path: &Path, default_scope: MetricScope) {
        let (values, scope) = match read_metrics_file(path) {
            Ok(v) => v,
            Err(e) => {
                self.warn(format!("{id}: unreadable metrics: {e}"));
                return;
            }
        };
        let scope = if default_scope == MetricScope::Smoke {
            MetricScope::Smoke
        } else {
            scope.unwrap_or(MetricScope::Full)
        };
        let now = self.clock.now();
        for (name, value) in values {
            let known = self.board.read(|b| b.campaign().metric_spec.get(&name).is_some());
            if !known {
                continue;
            }
            if let Err(e) = self.board.write(|b| b.record_metric(id, &name, value, scope, now).map(|_| ())) {
                self.warn(format!("{id}: {e}"));
            }
        }
    }

    // ---- (4) strategist ----

    fn turn_trigger(&self) -> Option<TurnTrigger> {
        let queue_empty = self.queue.is_empty();
        self.board.read(|b| {
            let c = b.campaign();
            if c.strategist_turns == 0 {
                return Some(TurnTrigger::Initial);
            }
            if cadence_due(c.analyzed_count, c.strategist_turns, c.policy.strategist_cadence) {
                return Some(TurnTrigger::Cadence);
            }
            let idle = queue_empty && !b.experiments().iter().any(|e| in_flight(e.state));
            let awaiting = b.in_state(LifecycleState::Analyzed).next().is_some();
            if idle && c.budget_remaining > 0 && self.config.starvation_guard && !self.starved {
                return Some(TurnTrigger::Starvation);
            }
            if idle && c.budget_remaining == 0 && awaiting {
                return Some(TurnTrigger::Flush);
            }
            None
        })
    }

    fn playbook_doc(&self) -> Option<ContextDoc> {
        self.board.read(|b| {
            b.playbook_head()
                .map(|v| ContextDoc::new(format!("playbook:v{}", v.seq), "Playbook", v.content.clone()))
        })
    }

    fn strategist_context(&self, turn: u32, awaiting: &[ExperimentId], chat: &[(u64, String)]) -> Vec<ContextDoc> {
        let mut extras = Vec::new();
        let (vars, digest, debriefs) = self.board.read(|b| {
            let c = b.campaign();
            let band = budget_band(c.budget_remaining);
            let vars = format!(
                "turn: {turn}\nbudget_remaining: {}\nbudget_initial: {}\nband: {band}\nanalyzed_count: {}\nproposals_accepted: {}\nstall_count: {}\n\nBudget: {} of {} proposals remain ({band}). {}\n",
                c.budget_remaining,
                c.budget_initial,
                c.analyzed_count,
                c.accepted_proposals,
                c.stall_count,
                c.budget_remaining,
                c.budget_initial,
                band.guidance(),
            );
            let digest = serde_json::to_string_pretty(&board_digest(b)).expect("digest serializes");
            let mut debriefs = String::new();
            for id in awaiting {
                if let Some(e) = b.experiment(id) {
                    let metrics: Vec<String> = e
                        .metrics
                        .values()
                        .map(|m| format!("{}={} ({:?})", m.name, m.value, m.scope).to_lowercase())
                        .collect();
                    let text = fs::read_to_string(self.workspace.join(experiment_dir(&e.name)).join(DEBRIEF))
                        .unwrap_or_default();
                    let text: String = text.chars().take(4000).collect();
                    let _ = write!(
                        debriefs,
                        "### {} ({})\nhypothesis: {}\nmetrics: {}\n\n{}\n\n",
                        e.name,
                        e.id,
                        e.hypothesis,
                        metrics.join(", "),
                        text.trim_end()
                    );
                }
            }
            (vars, digest, debriefs)
        });
        extras.push(ContextDoc::new(format!("turn:{turn}"), "Turn", vars));
        extras.push(ContextDoc::new("board", "Board digest", digest));
        if let Some(p) = self.playbook_doc() {
            extras.push(p);
        }
        if let Ok(l) = fs::read_to_string(self.workspace.join(LEARNINGS_FILE)) {
            extras.push(ContextDoc::new("learnings", "Learnings", l));
        }
        if !debriefs.is_empty() {
            extras.push(ContextDoc::new(format!("debriefs:{turn}"), "New debriefs", debriefs));
        }
        if !chat.is_empty() {
            let body: String = chat.iter().map(|(_, m)| format!("{m}\n")).collect();
            extras.push(ContextDoc::new(format!("chat:{turn}"), "Human guidance", body));
        }
        context_for(&self.bundle, Role::Strategist, extras)
    }

    fn unread_chat(&self) -> Vec<(u64, String)> {
        self.board.read(|b| {
            let consumed = b
                .events()
                .iter()
                .filter_map(|e| match &e.payload {
                    EventPayload::StrategistTurn { consumed_chat, .. } => consumed_chat.iter().max().copied(),
                    _ => None,
                })
                .max()
                .unwrap_or(0);
            b.chat()
                .iter()
                .filter(|m| m.seq > consumed)
                .map(|m| (m.seq, m.message.clone()))
                .collect()
        })
    }

    fn strategist_turn(&mut self, trigger: TurnTrigger, actions: &mut Vec<Action>) {
        let turn = self.board.read(|b| b.campaign().strategist_turns) + 1;
        let awaiting: Vec<ExperimentId> =
            self.board.read(|b| b.in_state(LifecycleState::Analyzed).map(|e| e.id.clone()).collect());
        let chat = self.unread_chat();
        let ctx = self.strategist_context(turn, &awaiting, &chat);
        let session = self.runtime.run_session(SessionRequest::new(Role::Strategist, ctx));

        let tool_results: Vec<bool> = session
            .calls_named("propose_experiment")
            .map(|(_, r)| match r.map(|r| &r.payload) {
                Some(Payload::Record { value }) => value.get("accepted").and_then(|a| a.as_bool()).unwrap_or(false),
                _ => false,
            })
            .collect();
        let output = parse_strategist_report(session.report_text());
        let now = self.clock.now();
        let applied = self.board.write(|b| apply_strategist_output(b, &output, now));
        for (name, reason) in &applied.cancel_rejected {
            self.warn(format!("strategist cancel of {name} rejected: {reason}"));
        }
        for (id, from) in &applied.cancelled {
            self.queue.remove(id);
            actions.push(Action::Transition {
                experiment: id.clone(),
                from: *from,
                to: LifecycleState::Cancelled,
            });
            if matches!(from, LifecycleState::Queued | LifecycleState::Running) {
                self.cancel_job(id);
            }
        }
        for id in &awaiting {
            if self.board.read(|b| b.experiment(id).map(|e| e.state)) == Some(LifecycleState::Analyzed) {
                self.step(id, LifecycleEvent::Acknowledge, None, actions);
            }
        }
        let accepted = applied.accepted.len() as u32 + tool_results.iter().filter(|a| **a).count() as u32;
        let rejected = (applied.rejected.len() + applied.invalid_names.len()) as u32
            + tool_results.iter().filter(|a| !**a).count() as u32;
        self.starved = trigger == TurnTrigger::Starvation && accepted == 0;
        let now = self.clock.now();
        self.board.write(|b| {
            let c = b.campaign();
            let payload = EventPayload::StrategistTurn {
                turn,
                session: session.id.clone(),
                analyzed_count: c.analyzed_count,
                budget_remaining: c.budget_remaining,
                band: budget_band(c.budget_remaining).to_string(),
                accepted,
                rejected,
                cancelled: applied.cancelled.len() as u32,
                consumed_chat: chat.iter().map(|(s, _)| *s).collect(),
            };
            b.record(payload, now)
        });
        actions.push(Action::StrategistTurn { turn, trigger });
    }

    fn cancel_job(&mut self, id: &ExperimentId) {
        let job = self.board.read(|b| b.experiment(id).and_then(|e| e.job.as_ref().map(|j| j.id.clone())));
        if let Some(job) = job {
            if let Err(e) = self.cluster.cancel(&job) {
                self.warn(format!("{id}: cancelling {job} failed: {e}"));
            }
            self.sync_handle(id, &job);
        }
    }

    // ---- (5) reporter ----

    fn milestones(&mut self, actions: &mut Vec<Action>) {
        loop {
            let (analyzed, done, cadence) = self.board.read(|b| {
                let c = b.campaign();
                (c.analyzed_count, c.milestones, c.policy.milestone_cadence)
            });
            if !milestone_due(analyzed, done, cadence) {
                break;
            }
            let number = done + 1;
            let rel = format!("{MILESTONE_DIR}/milestone_{number:03}/overview.md");
            let (leaderboard, flagged) = self.board.read(|b| {
                let rows: String = b
                    .leaderboard(Some(10))
                    .iter()
                    .map(|r| format!("{}. {} ({}) {}\n", r.rank, r.name, r.experiment, r.value))
                    .collect();
                let flagged: Vec<String> = b
                    .experiments()
                    .iter()
                    .filter(|e| {
                        e.is_flagged()
                            || (matches!(e.state, LifecycleState::Analyzed | LifecycleState::Done)
                                && e.metrics
                                    .get(&b.campaign().metric_spec.primary)
                                    .is_none_or(|m| m.scope == MetricScope::Smoke))
                    })
                    .map(|e| e.name.clone())
                    .collect();
                (rows, flagged)
            });
            let body = format!(
                "task: report\nmilestone: {number}\nanalyzed_count: {analyzed}\nreport_path: {rel}\n\nWrite the milestone overview to `{rel}`.\n\n## Leaderboard\n\n{leaderboard}\n## Flagged\n\n{}\n",
                if flagged.is_empty() { "(none)".to_string() } else { flagged.join("\n") }
            );
            let mut extras: Vec<ContextDoc> = self.playbook_doc().into_iter().collect();
            extras.push(ContextDoc::new(format!("task:report:{number}"), "Task", body));
            let session =
                self.runtime.run_session(SessionRequest::new(Role::Worker, context_for(&self.bundle, Role::Worker, extras)));
            let path = self.workspace.join(&rel);
            if !path.is_file() {
                let fallback = format!(
                    "# Milestone {number}\n\n{analyzed} experiments analyzed.\n\n## Leaderboard\n\n{leaderboard}\n## Flagged\n\n{}\n\n## Reporter\n\n{}\n",
                    if flagged.is_empty() { "(none)".to_string() } else { flagged.join("\n") },
                    session.report_text()
                );
                if let Some(dir) = path.parent() {
                    let _ = fs::create_dir_all(dir);
                }
                if let Err(e) = fs::write(&path, fallback) {
                    self.warn(format!("milestone {number}: {e}"));
                }
            }
            let now = self.clock.now();
            self.board.write(|b| {
                b.record(
                    EventPayload::Milestone {
                        number,
                        analyzed_count: analyzed,
                        path: rel.clone(),
                    },
                    now,
                )
            });
            actions.push(Action::Milestone { number });
        }
    }

    // ---- (6) supervisor ----

    fn supervise(&mut self, actions: &mut Vec<Action>) {
        let events: Vec<BoardEvent> = self.board.read(|b| b.events().to_vec());
        self.monitor.observe(&events);
        let tau = self.board.read(|b| b.campaign().policy.tau);
        if !self.monitor.should_intervene(tau, &self.config.supervisor) {
            return;
        }
        let rate = self.monitor.window().failure_rate().unwrap_or(0.0);
        let number = self.monitor.interventions() + 1;
        let failures = self.board.read(|b| {
            collect_failures(b, self.monitor.window(), &self.workspace, self.config.supervisor.log_excerpt_bytes)
        });
        let result = intervene(
            &self.runtime,
            &mut self.bundle,
            &self.workspace,
            &self.config.supervisor,
            number,
            rate,
            &failures,
        );
        let now = self.clock.now();
        match result {
            Ok(iv) => {
                let payload = EventPayload::Supervisor {
                    number,
                    failure_rate: rate,
                    session: iv.session.clone(),
                    patch_applied: iv.patch_applied(),
                    checkpoint: iv.checkpoints.first().copied(),
                    record_path: iv.record_path.clone(),
                };
                self.board.write(|b| b.record(payload, now));
                if !iv.patch_applied() {
                    self.warn(format!("supervisor intervention {number}: no patch proposed"));
                }
            }
            Err(e) => {
                self.warn(format!("supervisor intervention {number} failed: {e}"));
                let payload = EventPayload::Supervisor {
                    number,
                    failure_rate: rate,
                    session: String::new(),
                    patch_applied: false,
                    checkpoint: None,
                    record_path: String::new(),
                };
                self.board.write(|b| b.record(payload, now));
            }
        }
        let events: Vec<BoardEvent> = self.board.read(|b| b.events().to_vec());
        self.monitor.observe(&events);
        actions.push(Action::Intervention { number });
    }

    // ---- (7) halt ----

    fn halt_check(&mut self, actions: &mut Vec<Action>) {
        let (stalled, budget_done, window) = self.board.read(|b| {
            let c = b.campaign();
            (
                c.stall_count >= c.policy.convergence_window,
                c.budget_remaining == 0 && b.all_terminal(),
                c.policy.convergence_window,
            )
        });
        let idle = self.queue.is_empty() && self.board.read(|b| !b.experiments().iter().any(|e| in_flight(e.state)));
        let operator = fs::read_to_string(self.workspace.join(HALT_FILE)).ok();
        let reason = if let Some(note) = operator {
            Some(match note.trim() {
                "" => "operator halt".to_string(),
                n => format!("operator halt: {n}"),
            })
        } else if self.converged_now || stalled {
            Some(format!("converged: {window} consecutive analyzed experiments without improvement"))
        } else if budget_done {
            Some("budget exhausted".to_string())
        } else if self.starved && idle {
            Some("starved: budget remains but the strategist proposed nothing".to_string())
        } else if self.ticks >= self.config.max_ticks {
            Some(format!("tick limit {} reached", self.config.max_ticks))
        } else {
            None
        };
        if let Some(reason) = reason {
            self.halt(&reason, actions);
        }
    }

    /// Stops the campaign: analyzed experiments are acknowledged, everything
    /// else still open is cancelled and its job stopped.
    pub fn halt(&mut self, reason: &str, actions: &mut Vec<Action>) {
        for t in self.queue.drain() {
            let now = self.clock.now();
            self.board.write(|b| b.record_task(TaskAction::Dropped, t.kind, &t.experiment, None, now));
        }
        let open: Vec<(ExperimentId, LifecycleState)> = self.board.read(|b| {
            b.experiments()
                .iter()
                .filter(|e| !e.state.is_terminal())
                .map(|e| (e.id.clone(), e.state))
                .collect()
        });
        for (id, state) in open {
            if state == LifecycleState::Analyzed {
                self.step(&id, LifecycleEvent::Acknowledge, None, actions);
                continue;
            }
            let now = self.clock.now();
            if self.board.write(|b| b.cancel(&id, &format!("halted: {reason}"), now)).is_ok() {
                actions.push(Action::Transition {
                    experiment: id.clone(),
                    from: state,
                    to: LifecycleState::Cancelled,
                });
                if matches!(state, LifecycleState::Queued | LifecycleState::Running) {
                    self.cancel_job(&id);
                }
            }
        }
        let now = self.clock.now();
        self.board.write(|b| b.halt(reason, now));
        actions.push(Action::Halted {
            reason: reason.to_string(),
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cadence_counts_the_initial_turn() {
        assert!(cadence_due(0, 0, 5));
        assert!(!cadence_due(4, 1, 5));
        assert!(cadence_due(5, 1, 5));
        assert!(!cadence_due(9, 2, 5));
        assert!(cadence_due(10, 2, 5));
    }

    #[test]
    fn milestones_floor() {
        assert!(!milestone_due(14, 0, 15));
        assert!(milestone_due(15, 0, 15));
        assert!(!milestone_due(29, 1, 15));
        assert!(milestone_due(30, 1, 15));
    }
}
