#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use campaign::adapter::{BuiltinSet, Role};
use campaign::agent::{Runtime, SessionSummary};
use campaign::board::{Board, LifecycleEvent as Ev, LifecycleState as St};
use campaign::campaign::{run_profile, Campaign, CampaignOutcome};
use campaign::clock::{SharedClock, VirtualClock};
use campaign::cluster::{ClusterEvent, ClusterEventKind};
use campaign::fixtures::{fixtures_root, AgentScript, Profile, ScriptedFactory};
use campaign::pipeline::{run_phase2, Phase2Report};
use campaign::tools::Toolbelt;

pub struct Run {
    pub dir: tempfile::TempDir,
    pub campaign: Campaign,
    pub outcome: CampaignOutcome,
}

impl Run {
    pub fn ws(&self) -> &Path {
        self.dir.path()
    }

    pub fn board(&self) -> Board {
        self.campaign.board().expect("board bound").snapshot()
    }
}

pub fn run(name: &str) -> Run {
    let dir = tempfile::tempdir().unwrap();
    let (campaign, outcome) = run_profile(Profile::shipped(name).unwrap(), dir.path()).unwrap();
    Run { dir, campaign, outcome }
}

/// Session summaries as the runtime wrote them to disk.
pub fn session_index(ws: &Path) -> Vec<SessionSummary> {
    std::fs::read_to_string(ws.join("logs/sessions/index.jsonl"))
        .unwrap_or_default()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Checks `allocated + free == fleet` after every event and that no GPU is
/// held by two jobs at once.
pub fn check_cluster_log(log: &[ClusterEvent], fleet: u32) -> Result<(), String> {
    let mut held: std::collections::BTreeMap<u32, String> = Default::default();
    for (i, ev) in log.iter().enumerate() {
        if ev.allocated + ev.free != fleet {
            return Err(format!("event {i}: allocated {} + free {} != {fleet}", ev.allocated, ev.free));
        }
        match ev.kind {
            ClusterEventKind::Launched => {
                for g in &ev.gpus {
                    if let Some(other) = held.insert(*g, ev.job.clone()) {
                        return Err(format!("event {i}: gpu {g} given to {} while held by {other}", ev.job));
                    }
                }
            }
            ClusterEventKind::Finished | ClusterEventKind::Cancelled => {
                held.retain(|_, job| job != &ev.job);
            }
            ClusterEventKind::Submitted => {}
        }
        if held.len() as u32 != ev.allocated {
            return Err(format!("event {i}: {} gpus held, log says {}", held.len(), ev.allocated));
        }
    }
    Ok(())
}

/// The lifecycle table written out edge by edge, independent of the
/// implementation's match.
pub fn oracle_next(state: St, event: Ev, fix_attempts: u32, k_max: u32) -> Option<St> {
    const EDGES: &[(St, Ev, St)] = &[
        (St::ToImplement, Ev::Assign, St::Implementing),
        (St::Implementing, Ev::CodeWritten, St::Implemented),
        (St::Implemented, Ev::CheckPassed, St::Checked),
        (St::Checked, Ev::Enqueue, St::Queued),
        (St::Queued, Ev::JobLaunched, St::Running),
        (St::Running, Ev::JobSucceeded, St::Finished),
        (St::Running, Ev::JobFailed, St::Failed),
        (St::Finished, Ev::DebriefWritten, St::Analyzed),
        (St::Analyzed, Ev::Acknowledge, St::Done),
        (St::Implementing, Ev::WorkerFailed, St::Failed),
        (St::Implemented, Ev::WorkerFailed, St::Failed),
        (St::Finished, Ev::WorkerFailed, St::Failed),
    ];
    let terminal: BTreeSet<St> = [St::Done, St::Cancelled, St::FailedTerminal].into();
    if terminal.contains(&state) {
        return None;
    }
    if event == Ev::Cancel {
        return Some(St::Cancelled);
    }
    if state == St::Failed && event == Ev::Fix {
        return Some(if fix_attempts < k_max { St::Implementing } else { St::FailedTerminal });
    }
    EDGES.iter().find(|(s, e, _)| *s == state && *e == event).map(|(_, _, t)| *t)
}

/// Runs phase 2 in a fresh workspace with the shipped builder and tester
/// and the given critic script.
pub fn phase2_with_critic(critic_yaml: &str, i_max: u32) -> (tempfile::TempDir, Phase2Report) {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path();
    std::fs::write(ws.join("learnings.md"), "# Learnings\nhourly series, season 24\n").unwrap();
    let mut scripts = ScriptedFactory::new([]);
    scripts.load_dir(&fixtures_root().join("common/scripts")).unwrap();
    let critic = AgentScript::parse(critic_yaml).unwrap();
    assert_eq!(critic.role, Role::Critic);
    scripts.insert(critic);
    let clock: SharedClock = Arc::new(VirtualClock::new(0));
    let tools = Arc::new(Toolbelt::new(ws, clock.clone()));
    let runtime = Runtime::new(Arc::new(scripts), tools, clock).with_logs(ws);
    let bundle = BuiltinSet::shipped().bundle("time_series").unwrap();
    let report = run_phase2(&runtime, &bundle, ws, i_max).unwrap();
    (dir, report)
}

pub const CRITIC_TWICE_THEN_PASS: &str = r#"
role: critic
name: critic-twice
rules:
  - when:
      any:
        - var_equals: [revision, "1"]
        - var_equals: [revision, "2"]
    actions:
      - report: |
          VERDICT: NEEDS FIXES
          - [critical] harness/metrics.py:3 - scale uses the test window
  - when: always
    actions:
      - report: |
          VERDICT: PASS
"#;

pub const CRITIC_ALWAYS_FLAGS: &str = r#"
role: critic
name: critic-stubborn
rules:
  - when: always
    actions:
      - report: |
          VERDICT: NEEDS_FIXES
          - [critical] harness/data_prep.py:2 - split leaks the future
"#;
