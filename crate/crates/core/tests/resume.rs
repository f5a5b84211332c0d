mod common;

use std::fs;
use std::path::Path;
use std::sync::Arc;

use campaign::board::journal::{self, decode};
use campaign::board::{EventPayload, LifecycleState};
use campaign::campaign::{journal_end, profile_config, Campaign, CampaignError, JOURNAL};
use campaign::clock::VirtualClock;
use campaign::fixtures::Profile;

fn copy_tree(from: &Path, to: &Path) {
    for entry in walkdir::WalkDir::new(from) {
        let entry = entry.unwrap();
        let rel = entry.path().strip_prefix(from).unwrap();
        let dest = to.join(rel);
        if entry.file_type().is_dir() {
            fs::create_dir_all(&dest).unwrap();
        } else {
            fs::copy(entry.path(), &dest).unwrap();
        }
    }
}

fn resumable(name: &str, ws: &Path) -> Campaign {
    let profile = Profile::shipped(name).unwrap();
    let config = profile_config(&profile, ws);
    Campaign::assemble(
        config,
        Arc::new(VirtualClock::new(journal_end(ws))),
        Arc::new(profile.scripts),
        Some(profile.outcomes),
    )
}

/// Journal text cut right after the `n`th experiment reached `analyzed`,
/// with half of the next line left behind as a torn write.
fn crash_after_analyzed(text: &str, n: usize) -> (String, usize) {
    let lines: Vec<&str> = text.lines().collect();
    let mut seen = 0;
    for (i, line) in lines.iter().enumerate() {
        if line.contains(r#""to":"analyzed""#) {
            seen += 1;
            if seen == n {
                let mut cut = lines[..=i].join("\n");
                cut.push('\n');
                let next = lines[i + 1];
                cut.push_str(&next[..next.len() / 2]);
                return (cut, i + 1);
            }
        }
    }
    panic!("journal has fewer than {n} analyzed transitions");
}

#[test]
fn crashed_campaign_resumes_to_completion() {
    let full = common::run("happy_path");
    let crashed = tempfile::tempdir().unwrap();
    copy_tree(full.ws(), crashed.path());
    let text = fs::read_to_string(full.ws().join(JOURNAL)).unwrap();
    let (torn, kept) = crash_after_analyzed(&text, 20);
    fs::write(crashed.path().join(JOURNAL), torn).unwrap();
    let _ = fs::remove_file(crashed.path().join("board_snapshot.json"));

    let mut c = resumable("happy_path", crashed.path());
    let out = c.resume().unwrap();
    assert_eq!(out.halt_reason.as_deref(), Some("budget exhausted"));
    assert_eq!(out.accepted_proposals, 50);
    assert_eq!(out.budget_remaining, 0);

    let board = c.board().unwrap().snapshot();
    assert!(board.experiments().iter().all(|e| e.state.is_terminal()));
    let original = decode(&text).unwrap();
    assert_eq!(board.events()[..kept], original[..kept], "resume keeps the journal prefix");
    let times: Vec<u64> = board.events().iter().map(|e| e.at).collect();
    assert!(times.windows(2).all(|w| w[0] <= w[1]), "time never runs backwards");

    // The journal on disk is whole again and replays to the live board.
    let reloaded = journal::load(&crashed.path().join(JOURNAL)).unwrap();
    assert_eq!(reloaded, board);

    // Session ids continue rather than restart.
    let ids: Vec<String> = common::session_index(crashed.path()).into_iter().map(|s| s.id).collect();
    let unique: std::collections::BTreeSet<_> = ids.iter().collect();
    assert_eq!(unique.len(), ids.len(), "duplicate session ids after resume");
}

#[test]
fn in_flight_work_is_recovered_with_warnings() {
    let full = common::run("happy_path");
    let crashed = tempfile::tempdir().unwrap();
    copy_tree(full.ws(), crashed.path());
    let text = fs::read_to_string(full.ws().join(JOURNAL)).unwrap();
    let (torn, kept) = crash_after_analyzed(&text, 10);
    fs::write(crashed.path().join(JOURNAL), torn).unwrap();
    let before = journal::load(&crashed.path().join(JOURNAL)).unwrap();
    let in_flight = before
        .experiments()
        .iter()
        .filter(|e| matches!(e.state, LifecycleState::Queued | LifecycleState::Running | LifecycleState::Implementing))
        .count();
    assert!(in_flight > 0, "the cut should leave work in flight");

    let mut c = resumable("happy_path", crashed.path());
    c.resume().unwrap();
    let board = c.board().unwrap().snapshot();
    let warnings = board.events()[kept..]
        .iter()
        .filter(|e| matches!(&e.payload, EventPayload::Warning { message } if message.contains("lost on restart")))
        .count();
    assert_eq!(warnings, in_flight);
}

#[test]
fn halted_campaign_resumes_as_is() {
    let full = common::run("budget_exhaustion");
    let before = fs::read_to_string(full.ws().join(JOURNAL)).unwrap();
    let mut c = resumable("budget_exhaustion", full.ws());
    let out = c.resume().unwrap();
    assert_eq!(out.digest, full.outcome.digest);
    assert_eq!(out.halt_reason, full.outcome.halt_reason);
    assert_eq!(fs::read_to_string(full.ws().join(JOURNAL)).unwrap(), before);
}

#[test]
fn launch_and_resume_guard_the_workspace() {
    let full = common::run("budget_exhaustion");
    let mut again = resumable("budget_exhaustion", full.ws());
    assert!(matches!(again.launch(), Err(CampaignError::AlreadyLaunched(_))));

    let empty = tempfile::tempdir().unwrap();
    let mut c = resumable("budget_exhaustion", empty.path());
    assert!(matches!(c.resume(), Err(CampaignError::NotLaunched(_))));
}
