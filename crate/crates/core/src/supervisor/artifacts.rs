//! Checks that a phase left behind what the next phase reads.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::board::Phase;

pub const PLAN_FILE: &str = "plan.md";
pub const LEARNINGS_FILE: &str = "learnings.md";
pub const DATA_REPORT_DIR: &str = "data_report";
pub const DATA_REPORT_FILES: [&str; 3] = ["schema.md", "statistics.md", "findings.md"];
pub const HARNESS_DIR: &str = "harness";
pub const HARNESS_FILES: [&str; 4] = ["runner.py", "metrics.py", "data_prep.py", "config.yaml"];
pub const TESTS_DIR: &str = "harness/tests";
pub const TEST_REPORT_FILE: &str = "harness/test_report.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "issue", rename_all = "snake_case")]
pub enum ArtifactIssue {
    Missing { path: String },
    Empty { path: String },
    /// `plan.md` has no `- [ ]` / `- [x]` items.
    NoChecklist,
    /// Unchecked items outnumber the `ABANDONED:` notes.
    UnfinishedPlan { unchecked: usize, abandoned: usize },
    NoTests,
    UnreadableTestReport { reason: String },
    TestsFailing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PlanStatus {
    pub checked: usize,
    pub unchecked: usize,
    pub abandoned: usize,
}

pub fn plan_status(text: &str) -> PlanStatus {
    let mut s = PlanStatus::default();
    for line in text.lines().map(str::trim_start) {
        let item = line.strip_prefix("- ").or_else(|| line.strip_prefix("* "));
        match item.map(|r| r.get(..3)) {
            Some(Some("[x]" | "[X]")) => s.checked += 1,
            Some(Some("[ ]")) => s.unchecked += 1,
            _ => {}
        }
        if line.starts_with("ABANDONED:") {
            s.abandoned += 1;
        }
    }
    s
}

/// Written by the pipeline after each tester session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestReport {
    pub iteration: u32,
    pub passed: bool,
    pub session: String,
    pub output: String,
}

fn non_empty_file(ws: &Path, rel: &str, issues: &mut Vec<ArtifactIssue>) {
    match fs::read_to_string(ws.join(rel)) {
        Err(_) => issues.push(ArtifactIssue::Missing { path: rel.into() }),
        Ok(t) if t.trim().is_empty() => issues.push(ArtifactIssue::Empty { path: rel.into() }),
        Ok(_) => {}
    }
}

/// Phase 1: plan, learnings and data report. Phase 2: harness files, at least
/// one test and a passing test report. Other phases have no artifacts.
pub fn validate_phase_artifacts(phase: Phase, workspace: &Path) -> Vec<ArtifactIssue> {
    let mut issues = Vec::new();
    match phase {
        Phase::Phase1 => {
            match fs::read_to_string(workspace.join(PLAN_FILE)) {
                Err(_) => issues.push(ArtifactIssue::Missing { path: PLAN_FILE.into() }),
                Ok(text) => {
                    let s = plan_status(&text);
                    if s.checked + s.unchecked == 0 {
                        issues.push(ArtifactIssue::NoChecklist);
                    } else if s.unchecked > s.abandoned {
                        issues.push(ArtifactIssue::UnfinishedPlan {
                            unchecked: s.unchecked,
                            abandoned: s.abandoned,
                        });
                    }
                }
            }
            non_empty_file(workspace, LEARNINGS_FILE, &mut issues);
            for f in DATA_REPORT_FILES {
                non_empty_file(workspace, &format!("{DATA_REPORT_DIR}/{f}"), &mut issues);
            }
        }
        Phase::Phase2 => {
            for f in HARNESS_FILES {
                let rel = format!("{HARNESS_DIR}/{f}");
                if !workspace.join(&rel).is_file() {
                    issues.push(ArtifactIssue::Missing { path: rel });
                }
            }
            let has_tests = fs::read_dir(workspace.join(TESTS_DIR))
                .map(|d| d.filter_map(Result::ok).any(|e| e.path().is_file()))
                .unwrap_or(false);
            if !has_tests {
                issues.push(ArtifactIssue::NoTests);
            }
            match fs::read_to_string(workspace.join(TEST_REPORT_FILE)) {
                Err(_) => issues.push(ArtifactIssue::Missing {
                    path: TEST_REPORT_FILE.into(),
                }),
                Ok(text) => match serde_json::from_str::<TestReport>(&text) {
                    Ok(r) if r.passed => {}
                    Ok(_) => issues.push(ArtifactIssue::TestsFailing),
                    Err(e) => issues.push(ArtifactIssue::UnreadableTestReport { reason: e.to_string() }),
                },
            }
        }
        Phase::Phase0 | Phase::Phase3 | Phase::Halted => {}
    }
    issues
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(ws: &Path, rel: &str, text: &str) {
        let p = ws.join(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, text).unwrap();
    }

    fn phase1_outputs(ws: &Path) {
        write(ws, "plan.md", "- [x] load data\n- [ ] seasonality\nABANDONED: seasonality, series too short\n");
        write(ws, "learnings.md", "- 3 series, hourly\n");
        for f in DATA_REPORT_FILES {
            write(ws, &format!("data_report/{f}"), "ok\n");
        }
    }

    #[test]
    fn complete_phase1_is_ok() {
        let d = tempfile::tempdir().unwrap();
        phase1_outputs(d.path());
        assert_eq!(validate_phase_artifacts(Phase::Phase1, d.path()), vec![]);
    }

    #[test]
    fn missing_learnings_is_an_issue() {
        let d = tempfile::tempdir().unwrap();
        phase1_outputs(d.path());
        fs::remove_file(d.path().join("learnings.md")).unwrap();
        assert_eq!(
            validate_phase_artifacts(Phase::Phase1, d.path()),
            vec![ArtifactIssue::Missing {
                path: "learnings.md".into()
            }]
        );
    }

    #[test]
    fn unticked_plan_items_need_a_note() {
        let s = plan_status("- [x] a\n- [ ] b\n* [X] c\n");
        assert_eq!((s.checked, s.unchecked, s.abandoned), (2, 1, 0));
        let d = tempfile::tempdir().unwrap();
        phase1_outputs(d.path());
        write(d.path(), "plan.md", "- [ ] b\n");
        assert!(validate_phase_artifacts(Phase::Phase1, d.path())
            .contains(&ArtifactIssue::UnfinishedPlan { unchecked: 1, abandoned: 0 }));
    }

    #[test]
    fn failing_test_report_is_an_issue() {
        let d = tempfile::tempdir().unwrap();
        for f in HARNESS_FILES {
            write(d.path(), &format!("harness/{f}"), "x");
        }
        write(d.path(), "harness/tests/test_metrics.py", "x");
        let report = TestReport {
            iteration: 1,
            passed: false,
            session: "tester-0001".into(),
            output: "1 failed".into(),
        };
        write(d.path(), TEST_REPORT_FILE, &serde_json::to_string(&report).unwrap());
        assert_eq!(validate_phase_artifacts(Phase::Phase2, d.path()), vec![ArtifactIssue::TestsFailing]);
        let passed = TestReport { passed: true, ..report };
        write(d.path(), TEST_REPORT_FILE, &serde_json::to_string(&passed).unwrap());
        assert_eq!(validate_phase_artifacts(Phase::Phase2, d.path()), vec![]);
    }
}
