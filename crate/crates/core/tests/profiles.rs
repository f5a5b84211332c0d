mod common;

use std::sync::{Arc, Mutex};

use campaign::board::{EventPayload, LifecycleState};
use campaign::campaign::{profile_config, request_halt, Campaign};
use campaign::clock::VirtualClock;
use campaign::fixtures::{Profile, PROFILES};

#[test]
fn every_profile_meets_its_expectations() {
    for name in PROFILES {
        let run = common::run(name);
        let want = Profile::shipped(name).unwrap().spec.expected;
        let o = &run.outcome;
        if let Some(d) = &want.digest {
            assert_eq!(&o.digest, d, "{name}: digest");
        }
        if let Some(n) = want.accepted {
            assert_eq!(o.accepted_proposals, n, "{name}: accepted");
        }
        if let Some(n) = want.analyzed {
            assert_eq!(o.analyzed_count, n, "{name}: analyzed");
        }
        if let Some(n) = want.interventions {
            assert_eq!(o.interventions, n, "{name}: interventions");
        }
        if let Some(p) = &want.halt_reason_prefix {
            let reason = o.halt_reason.clone().unwrap_or_default();
            assert!(reason.starts_with(p.as_str()), "{name}: halt reason `{reason}`");
        }
        let board = run.board();
        assert!(board.experiments().iter().all(|e| e.state.is_terminal()), "{name}: open experiments");
    }
}

#[test]
fn runs_are_deterministic() {
    for name in ["happy_path", "failure_burst"] {
        let a = common::run(name);
        let b = common::run(name);
        assert_eq!(a.outcome.digest, b.outcome.digest, "{name}");
        assert_eq!(a.outcome.accounting, b.outcome.accounting, "{name}");
        assert_eq!(a.campaign.cluster_log(), b.campaign.cluster_log(), "{name}");
    }
}

#[test]
fn supervisor_storm_intervenes_repeatedly() {
    let run = common::run("supervisor_storm");
    let board = run.board();
    let records: Vec<(u32, f64, bool, String)> = board
        .events()
        .iter()
        .filter_map(|e| match &e.payload {
            EventPayload::Supervisor {
                number,
                failure_rate,
                patch_applied,
                record_path,
                ..
            } => Some((*number, *failure_rate, *patch_applied, record_path.clone())),
            _ => None,
        })
        .collect();
    assert_eq!(records.len() as u32, run.outcome.interventions);
    assert!(records.len() >= 2, "storm should trigger more than once");
    assert!(records.iter().all(|r| r.1 > 0.4));
    let numbers: Vec<u32> = records.iter().map(|r| r.0).collect();
    assert_eq!(numbers, (1..=records.len() as u32).collect::<Vec<_>>());
    // OOM kills have no kwargs signature; the scripted supervisor declines to patch.
    assert!(records.iter().all(|r| !r.2));
    for (_, _, _, path) in &records {
        assert!(run.ws().join(path).is_file(), "missing supervisor record {path}");
    }
}

#[test]
fn failure_burst_patch_lands_in_domain_knowledge() {
    let run = common::run("failure_burst");
    let text = std::fs::read_to_string(run.ws().join("adapter/domain_knowledge.md")).unwrap();
    assert!(text.contains("keyword"), "supervisor note missing:\n{text}");
    let failed = run.board().in_state(LifecycleState::FailedTerminal).count();
    assert_eq!(failed, 5);
}

fn campaign_for(name: &str, ws: &std::path::Path) -> Campaign {
    let profile = Profile::shipped(name).unwrap();
    let config = profile_config(&profile, ws);
    Campaign::assemble(config, Arc::new(VirtualClock::new(0)), Arc::new(profile.scripts), Some(profile.outcomes))
}

#[test]
fn operator_halt_file_stops_the_campaign() {
    let dir = tempfile::tempdir().unwrap();
    request_halt(dir.path(), "maintenance window").unwrap();
    let mut c = campaign_for("happy_path", dir.path());
    let out = c.launch().unwrap();
    assert_eq!(out.halt_reason.as_deref(), Some("operator halt: maintenance window"));
    assert!(!dir.path().join("HALT").exists(), "halt file is consumed");
    let board = c.board().unwrap().snapshot();
    assert!(board.experiments().iter().all(|e| e.state.is_terminal()));
}

#[test]
fn chat_reaches_the_next_strategist_turn() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = campaign_for("budget_exhaustion", dir.path());
    let posted = Arc::new(Mutex::new(None));
    let slot = posted.clone();
    c.on_board(move |board| {
        let seq = board.write(|b| b.post_chat("prefer seasonal baselines", 0));
        *slot.lock().unwrap() = Some(seq);
    });
    c.launch().unwrap();
    let seq = posted.lock().unwrap().expect("hook ran");
    let board = c.board().unwrap().snapshot();
    let consumed: Vec<Vec<u64>> = board
        .events()
        .iter()
        .filter_map(|e| match &e.payload {
            EventPayload::StrategistTurn { consumed_chat, .. } => Some(consumed_chat.clone()),
            _ => None,
        })
        .collect();
    assert_eq!(consumed[0], vec![seq], "first turn reads the message");
    assert!(consumed[1..].iter().all(|c| c.is_empty()), "later turns do not see it again");
}
