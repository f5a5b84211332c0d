use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    account, AccountPhase, Accounting, AgentAction, AgentBackend, AgentSession, BackendFactory, BackendReply,
    SessionLimits, SessionOutcome, SessionSummary, ToolCall, TranscriptRecord,
};
use crate::adapter::{ContextDoc, Role};
use crate::clock::SharedClock;
use crate::events::{EventBus, StreamBody};
use crate::tools::{CallerInfo, Dispatch, Payload, ToolErrorKind, ToolResult, Toolbelt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuntimeConfig {
    /// Sessions at this depth may not spawn children. Top-level sessions are depth 0.
    pub max_spawn_depth: u32,
    pub retry_attempts: u32,
    pub retry_base_ms: u64,
    pub limits: SessionLimits,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            max_spawn_depth: 2,
            retry_attempts: 3,
            retry_base_ms: 500,
            limits: SessionLimits::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionRequest {
    pub role: Role,
    pub context: Vec<ContextDoc>,
    pub limits: Option<SessionLimits>,
}

impl SessionRequest {
    pub fn new(role: Role, context: Vec<ContextDoc>) -> Self {
        Self {
            role,
            context,
            limits: None,
        }
    }

    pub fn with_limits(mut self, limits: SessionLimits) -> Self {
        self.limits = Some(limits);
        self
    }
}

/// Runs sessions and keeps the campaign's session ledger.
pub struct Runtime {
    factory: Arc<dyn BackendFactory>,
    tools: Arc<Toolbelt>,
    clock: SharedClock,
    bus: Option<EventBus>,
    log_dir: Option<PathBuf>,
    config: RuntimeConfig,
    counter: AtomicU64,
    ledger: Mutex<Vec<SessionSummary>>,
}

struct Parent<'a> {
    id: &'a str,
    phase: AccountPhase,
    depth: u32,
}

impl Runtime {
    pub fn new(factory: Arc<dyn BackendFactory>, tools: Arc<Toolbelt>, clock: SharedClock) -> Self {
        Self {
            factory,
            tools,
            clock,
            bus: None,
            log_dir: None,
            config: RuntimeConfig::default(),
            counter: AtomicU64::new(0),
            ledger: Mutex::new(Vec::new()),
        }
    }

    pub fn with_bus(mut self, bus: EventBus) -> Self {
        self.bus = Some(bus);
        self
    }

    /// Persist transcripts under `<workspace>/logs/sessions/`.
    pub fn with_logs(mut self, workspace: &std::path::Path) -> Self {
        self.log_dir = Some(workspace.join("logs").join("sessions"));
        self
    }

    pub fn with_config(mut self, config: RuntimeConfig) -> Self {
        self.config = config;
        self
    }

    /// Continue session numbering after `n` (used when resuming).
    pub fn skip_ids(&self, n: u64) {
        self.counter.fetch_max(n, Ordering::SeqCst);
    }

    pub fn config(&self) -> &RuntimeConfig {
        &self.config
    }

    pub fn tools(&self) -> &Toolbelt {
        &self.tools
    }

    pub fn sessions(&self) -> Vec<SessionSummary> {
        self.ledger.lock().clone()
    }

    pub fn account(&self) -> Accounting {
        account(&self.ledger.lock())
    }

    pub fn run_session(&self, req: SessionRequest) -> AgentSession {
        let limits = req.limits.unwrap_or(self.config.limits);
        self.run(req.role, req.context, limits, None)
    }

    fn next_id(&self, role: Role) -> String {
        let n = self.counter.fetch_add(1, Ordering::SeqCst) + 1;
        format!("{role}-{n:04}")
    }

    fn run(&self, role: Role, context: Vec<ContextDoc>, limits: SessionLimits, parent: Option<Parent<'_>>) -> AgentSession {
        let id = self.next_id(role);
        let mut backend = self.factory.create(role, &id);
        let mut session = AgentSession {
            id: id.clone(),
            role,
            phase: parent.as_ref().map_or(AccountPhase::of(role), |p| p.phase),
            parent: parent.as_ref().map(|p| p.id.to_string()),
            depth: parent.as_ref().map_or(0, |p| p.depth + 1),
            backend: backend.identity(),
            transcript: Vec::new(),
            tokens_in: 0,
            tokens_out: 0,
            api_calls: 0,
            tool_calls: 0,
            limits,
            outcome: SessionOutcome::LimitExceeded,
            report: None,
            protocol_deviation: false,
            error: None,
        };
        let caller = CallerInfo {
            session: id.clone(),
            role,
            depth: session.depth,
        };
        let specs = self.tools.specs_for(role);
        let started = self.clock.now();
        for doc in context {
            self.push(&mut session, TranscriptRecord::Prompt { doc });
        }
        loop {
            if limits.wall_clock_s > 0 && self.clock.now().saturating_sub(started) >= limits.wall_clock_s * 1000 {
                session.outcome = SessionOutcome::LimitExceeded;
                break;
            }
            let reply = match self.ask(backend.as_mut(), &mut session, &specs) {
                Ok(r) => r,
                Err(e) => {
                    session.outcome = SessionOutcome::BackendError;
                    session.error = Some(e);
                    break;
                }
            };
            session.tokens_in += reply.usage.tokens_in;
            session.tokens_out += reply.usage.tokens_out;
            let call = match reply.action {
                AgentAction::FinalText(text) => {
                    log::warn!("session {id} ended with bare text instead of report_to_user");
                    self.push(&mut session, TranscriptRecord::FinalText { text: text.clone() });
                    self.persist_report(&session, &text);
                    session.report = Some(text);
                    session.protocol_deviation = true;
                    session.outcome = SessionOutcome::Reported;
                    break;
                }
                AgentAction::ToolCall(mut call) => {
                    if call.id.is_empty() {
                        call.id = format!("call-{}", session.tool_calls + 1);
                    }
                    call
                }
            };
            session.tool_calls += 1;
            self.push(&mut session, TranscriptRecord::ToolCall { call: call.clone() });
            match self.tools.dispatch(&caller, &call) {
                Dispatch::Report(message) => {
                    let result = ToolResult::record(json!({ "delivered": true }));
                    self.push_result(&mut session, &call, result);
                    self.persist_report(&session, &message);
                    session.report = Some(message);
                    session.outcome = SessionOutcome::Reported;
                    break;
                }
                Dispatch::Spawn { prompt, max_tool_calls } => {
                    let result = self.spawn(&session, &prompt, max_tool_calls);
                    self.push_result(&mut session, &call, result);
                }
                Dispatch::Done(result) => {
                    let image = match &result.payload {
                        Payload::Image {
                            path, digest, media_type, ..
                        } => Some(TranscriptRecord::ImageAttachment {
                            call_id: call.id.clone(),
                            path: path.clone(),
                            digest: digest.clone(),
                            media_type: media_type.clone(),
                        }),
                        _ => None,
                    };
                    self.push_result(&mut session, &call, result);
                    if let Some(rec) = image {
                        self.push(&mut session, rec);
                    }
                }
            }
            if session.tool_calls >= limits.max_tool_calls {
                session.outcome = SessionOutcome::LimitExceeded;
                break;
            }
        }
        self.finish(&session);
        session
    }

    fn spawn(&self, parent: &AgentSession, prompt: &str, max_tool_calls: Option<u64>) -> ToolResult {
        if parent.depth >= self.config.max_spawn_depth {
            return ToolResult::error(
                ToolErrorKind::SpawnDepthExceeded,
                format!("spawn depth limit {} reached", self.config.max_spawn_depth),
            );
        }
        let mut limits = parent.limits;
        if let Some(n) = max_tool_calls {
            limits.max_tool_calls = n.min(limits.max_tool_calls).max(1);
        }
        let doc = ContextDoc::new(format!("spawn:{}:{}", parent.id, parent.tool_calls), "task", prompt);
        let child = self.run(
            parent.role,
            vec![doc],
            limits,
            Some(Parent {
                id: &parent.id,
                phase: parent.phase,
                depth: parent.depth,
            }),
        );
        let value = json!({
            "session": child.id,
            "outcome": child.outcome,
            "report": child.report,
        });
        if child.reported() {
            ToolResult::record(value)
        } else {
            ToolResult::error_with(ToolErrorKind::Provider, "sub-agent did not report", value)
        }
    }

    fn ask(
        &self,
        backend: &mut dyn AgentBackend,
        session: &mut AgentSession,
        specs: &[crate::tools::ToolSpec],
    ) -> Result<BackendReply, String> {
        let mut delay = self.config.retry_base_ms;
        let attempts = self.config.retry_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            session.api_calls += 1;
            match backend.next_action(&session.transcript, specs) {
                Ok(reply) => return Ok(reply),
                Err(e) => {
                    log::warn!("session {}: backend attempt {attempt}/{attempts} failed: {e}", session.id);
                    last = e.to_string();
                    if attempt < attempts {
                        self.clock.sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(last)
    }

    fn push_result(&self, session: &mut AgentSession, call: &ToolCall, result: ToolResult) {
        self.push(
            session,
            TranscriptRecord::ToolResult {
                call_id: call.id.clone(),
                name: call.name.clone(),
                result,
            },
        );
    }

    fn push(&self, session: &mut AgentSession, record: TranscriptRecord) {
        if let Some(dir) = &self.log_dir {
            let line = serde_json::to_string(&record).expect("transcript records serialize");
            if let Err(e) = append_line(dir, &format!("{}.jsonl", session.id), &line) {
                log::warn!("could not persist transcript for {}: {e}", session.id);
            }
        }
        if let Some(bus) = &self.bus {
            bus.publish(StreamBody::Transcript {
                session: session.id.clone(),
                role: session.role.to_string(),
                record: record.clone(),
            });
        }
        session.transcript.push(record);
    }

    fn persist_report(&self, session: &AgentSession, message: &str) {
        if message.is_empty() {
            log::info!("session {} sent an empty report", session.id);
        }
        if let Some(dir) = &self.log_dir {
            let line = json!({ "session": session.id, "role": session.role, "message": message }).to_string();
            let reports = dir.parent().expect("logs dir").to_path_buf();
            if let Err(e) = append_line(&reports, "reports.jsonl", &line) {
                log::warn!("could not persist report for {}: {e}", session.id);
            }
        }
        if let Some(bus) = &self.bus {
            bus.publish(StreamBody::Report {
                session: session.id.clone(),
                message: message.to_string(),
            });
        }
    }

    fn finish(&self, session: &AgentSession) {
        let summary = session.summary();
        if let Some(dir) = &self.log_dir {
            let line = serde_json::to_string(&summary).expect("summary serializes");
            if let Err(e) = append_line(dir, "index.jsonl", &line) {
                log::warn!("could not record session {}: {e}", session.id);
            }
        }
        self.ledger.lock().push(summary);
    }
}

fn append_line(dir: &std::path::Path, file: &str, line: &str) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut f = OpenOptions::new().create(true).append(true).open(dir.join(file))?;
    writeln!(f, "{line}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{BackendError, Usage};
    use crate::clock::VirtualClock;
    use crate::tools::ToolSpec;
    use serde_json::Value;
    use std::collections::VecDeque;

    /// Replays a fixed list of actions; repeats the last one forever.
    struct Canned(VecDeque<Result<AgentAction, BackendError>>);

    impl AgentBackend for Canned {
        fn identity(&self) -> String {
            "scripted:canned".into()
        }
        fn next_action(&mut self, _: &[TranscriptRecord], _: &[ToolSpec]) -> Result<BackendReply, BackendError> {
            let next = if self.0.len() > 1 {
                self.0.pop_front().unwrap()
            } else {
                self.0[0].clone()
            };
            next.map(|action| BackendReply {
                action,
                usage: Usage {
                    tokens_in: 10,
                    tokens_out: 2,
                },
            })
        }
    }

    struct Factory(Mutex<VecDeque<Vec<Result<AgentAction, BackendError>>>>);

    impl BackendFactory for Factory {
        fn create(&self, _: Role, _: &str) -> Box<dyn AgentBackend> {
            Box::new(Canned(self.0.lock().pop_front().expect("script for session").into()))
        }
    }

    fn tool(name: &str, args: Value) -> Result<AgentAction, BackendError> {
        Ok(AgentAction::ToolCall(ToolCall {
            id: String::new(),
            name: name.into(),
            arguments: args,
        }))
    }

    fn runtime(scripts: Vec<Vec<Result<AgentAction, BackendError>>>) -> (tempfile::TempDir, Runtime) {
        let dir = tempfile::tempdir().unwrap();
        let clock: SharedClock = Arc::new(VirtualClock::new(0));
        let tools = Arc::new(Toolbelt::new(dir.path(), clock.clone()));
        let rt = Runtime::new(Arc::new(Factory(Mutex::new(scripts.into()))), tools, clock).with_logs(dir.path());
        (dir, rt)
    }

    fn ctx() -> Vec<ContextDoc> {
        vec![ContextDoc::new("parent:secret", "notes", "parent only")]
    }

    #[test]
    fn shortest_legal_session() {
        let (dir, rt) = runtime(vec![vec![
            tool("shell_exec", json!({"cmd": "echo hi"})),
            tool("report_to_user", json!({"message": "done"})),
        ]]);
        let s = rt.run_session(SessionRequest::new(Role::Explorer, ctx()));
        assert_eq!(s.outcome, SessionOutcome::Reported);
        assert_eq!(s.tool_calls, 2);
        assert_eq!(s.report_text(), "done");
        let lines = fs::read_to_string(dir.path().join("logs/sessions/explorer-0001.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), s.transcript.len());
    }

    #[test]
    fn limit_trips_at_the_last_allowed_call() {
        let (_d, rt) = runtime(vec![vec![tool("read_board", json!({}))]]);
        let s = rt.run_session(SessionRequest::new(Role::Worker, ctx()).with_limits(SessionLimits {
            max_tool_calls: 5,
            wall_clock_s: 0,
        }));
        assert_eq!(s.outcome, SessionOutcome::LimitExceeded);
        assert_eq!(s.tool_calls, 5);
        assert!(s.report.is_none());
    }

    #[test]
    fn bare_text_is_a_deviation() {
        let (_d, rt) = runtime(vec![vec![Ok(AgentAction::FinalText("all done".into()))]]);
        let s = rt.run_session(SessionRequest::new(Role::Worker, ctx()));
        assert_eq!(s.outcome, SessionOutcome::Reported);
        assert!(s.protocol_deviation);
    }

    #[test]
    fn backend_errors_retry_then_give_up() {
        let err = Err(BackendError::Transport("connection reset".into()));
        let (_d, rt) = runtime(vec![vec![err]]);
        let s = rt.run_session(SessionRequest::new(Role::Worker, ctx()));
        assert_eq!(s.outcome, SessionOutcome::BackendError);
        assert_eq!(s.api_calls, 3);
    }

    #[test]
    fn image_calls_attach_the_image() {
        let (dir, rt) = runtime(vec![vec![
            tool("view_image", json!({"path": "plot.png"})),
            tool("report_to_user", json!({"message": "seen"})),
        ]]);
        fs::write(dir.path().join("plot.png"), b"png").unwrap();
        let s = rt.run_session(SessionRequest::new(Role::Explorer, ctx()));
        assert!(s
            .transcript
            .iter()
            .any(|r| matches!(r, TranscriptRecord::ImageAttachment { path, .. } if path == "plot.png")));
    }

    #[test]
    fn child_is_isolated_and_reports_back() {
        let (_d, rt) = runtime(vec![
            vec![
                tool("spawn_agent", json!({"prompt": "count rows"})),
                tool("report_to_user", json!({"message": "parent done"})),
            ],
            vec![tool("report_to_user", json!({"message": "X"}))],
        ]);
        let parent = rt.run_session(SessionRequest::new(Role::Explorer, ctx()));
        let (_, result) = parent.calls_named("spawn_agent").next().unwrap();
        let Payload::Record { value } = &result.unwrap().payload else { panic!() };
        assert_eq!(value["report"], "X");
        let sessions = rt.sessions();
        assert_eq!(sessions.len(), 2);
        let child = sessions.iter().find(|s| s.parent.is_some()).unwrap();
        assert_eq!(child.parent.as_deref(), Some(parent.id.as_str()));
        let acc = rt.account();
        assert_eq!(acc.totals.tokens_in, sessions.iter().map(|s| s.tokens_in).sum::<u64>());
    }

    #[test]
    fn spawn_depth_limit() {
        let spawn = || tool("spawn_agent", json!({"prompt": "go deeper"}));
        let report = || tool("report_to_user", json!({"message": "ok"}));
        let (_d, rt) = runtime(vec![
            vec![spawn(), report()],
            vec![spawn(), report()],
            vec![spawn(), report()],
        ]);
        rt.run_session(SessionRequest::new(Role::Explorer, ctx()));
        // depth 0 and 1 may spawn; depth 2 hits the limit, so only 3 sessions run.
        assert_eq!(rt.sessions().len(), 3);
    }
}
