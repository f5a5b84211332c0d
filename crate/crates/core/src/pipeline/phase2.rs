use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use super::verdict::{parse_tests_verdict, parse_verdict, CriticVerdict, Finding, TestsVerdict, Verdict};
use super::PipelineError;
use crate::adapter::{context_for, AdapterBundle, ContextDoc, Role};
use crate::agent::{Runtime, SessionRequest};
use crate::supervisor::{TestReport, HARNESS_DIR, HARNESS_FILES, LEARNINGS_FILE, TESTS_DIR, TEST_REPORT_FILE};

pub const VERDICT_LOG_FILE: &str = "harness/verdicts.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub iteration: u32,
    pub builder_session: String,
    pub critic_session: String,
    pub verdict: CriticVerdict,
    /// Set when the critic passed and the tester ran.
    pub tests: Option<TestsVerdict>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase2Report {
    pub iterations: u32,
    pub builder_sessions: u32,
    pub critic_sessions: u32,
    pub tester_runs: u32,
    pub passed: bool,
    pub verdicts: Vec<VerdictRecord>,
    /// Set when the loop hit its bound without passing tests.
    pub warning: Option<String>,
    /// Harness files the tester changed outside its directory; restored.
    pub reverted: Vec<String>,
}

fn learnings_doc(workspace: &Path) -> ContextDoc {
    let text = fs::read_to_string(workspace.join(LEARNINGS_FILE)).unwrap_or_default();
    ContextDoc::new("learnings", "Learnings", text)
}

fn findings_doc(iteration: u32, findings: &[Finding]) -> ContextDoc {
    let mut body = String::new();
    for f in findings {
        let _ = writeln!(body, "- [{:?}] {} - {}", f.severity, f.location, f.description);
    }
    ContextDoc::new(format!("findings:{iteration}"), "Critical findings to fix", body.to_lowercase())
}

/// The harness as the critic sees it: file contents only, nothing from the
/// builder's session.
fn harness_docs(workspace: &Path) -> Vec<ContextDoc> {
    let mut docs = Vec::new();
    for f in HARNESS_FILES {
        let rel = format!("{HARNESS_DIR}/{f}");
        let body = fs::read_to_string(workspace.join(&rel)).unwrap_or_else(|_| "(missing)".into());
        docs.push(ContextDoc::new(format!("file:{rel}"), rel, body));
    }
    docs
}

/// Every harness file outside the tester's directory, with its bytes.
fn guarded_snapshot(workspace: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let root = workspace.join(HARNESS_DIR);
    let tests = workspace.join(TESTS_DIR);
    WalkDir::new(&root)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file() && !e.path().starts_with(&tests))
        .filter_map(|e| Some((e.path().to_path_buf(), fs::read(e.path()).ok()?)))
        .collect()
}

/// Puts guarded files back as they were; returns the workspace paths touched.
fn restore(workspace: &Path, before: &BTreeMap<PathBuf, Vec<u8>>) -> Result<Vec<String>, std::io::Error> {
    let after = guarded_snapshot(workspace);
    let mut touched = Vec::new();
    for (p, bytes) in before {
        if after.get(p) != Some(bytes) {
            fs::write(p, bytes)?;
            touched.push(p.clone());
        }
    }
    for p in after.keys().filter(|p| !before.contains_key(*p)) {
        fs::remove_file(p)?;
        touched.push(p.clone());
    }
    Ok(touched
        .into_iter()
        .map(|p| p.strip_prefix(workspace).unwrap_or(&p).display().to_string())
        .collect())
}

/// Phase 2: builder, then an isolated critic; on PASS the tester writes and
/// runs tests. A failing test run goes back to the builder as critical
/// findings. At most `i_max` builder sessions; reaching the bound completes
/// the phase with a warning instead of failing it.
pub fn run_phase2(
    runtime: &Runtime,
    bundle: &AdapterBundle,
    workspace: &Path,
    i_max: u32,
) -> Result<Phase2Report, PipelineError> {
    let i_max = i_max.max(1);
    let mut report = Phase2Report {
        iterations: 0,
        builder_sessions: 0,
        critic_sessions: 0,
        tester_runs: 0,
        passed: false,
        verdicts: Vec::new(),
        warning: None,
        reverted: Vec::new(),
    };
    let mut findings: Vec<Finding> = Vec::new();
    fs::create_dir_all(workspace.join(HARNESS_DIR))?;
    for i in 1..=i_max {
        report.iterations = i;
        let mut extras = vec![
            learnings_doc(workspace),
            ContextDoc::new(format!("iteration:{i}"), "Iteration", format!("iteration: {i}\ni_max: {i_max}\n")),
        ];
        if !findings.is_empty() {
            extras.push(findings_doc(i, &findings));
        }
        let builder = runtime.run_session(SessionRequest::new(Role::Builder, context_for(bundle, Role::Builder, extras)));
        report.builder_sessions += 1;

        let mut critic_extras = vec![learnings_doc(workspace)];
        critic_extras.extend(harness_docs(workspace));
        let critic =
            runtime.run_session(SessionRequest::new(Role::Critic, context_for(bundle, Role::Critic, critic_extras)));
        report.critic_sessions += 1;
        let verdict = parse_verdict(critic.report_text());
        let mut record = VerdictRecord {
            iteration: i,
            builder_session: builder.id.clone(),
            critic_session: critic.id.clone(),
            verdict: verdict.clone(),
            tests: None,
        };
        if verdict.verdict == Verdict::NeedsFixes {
            findings = verdict.criticals().cloned().collect();
            report.verdicts.push(record);
            continue;
        }

        let guarded = guarded_snapshot(workspace);
        let tester_extras = vec![
            learnings_doc(workspace),
            ContextDoc::new(format!("iteration:{i}"), "Iteration", format!("iteration: {i}\ntests_dir: {TESTS_DIR}\n")),
        ];
        let tester =
            runtime.run_session(SessionRequest::new(Role::Tester, context_for(bundle, Role::Tester, tester_extras)));
        report.tester_runs += 1;
        report.reverted.extend(restore(workspace, &guarded)?);
        let tests = parse_tests_verdict(tester.report_text());
        record.tests = Some(tests);
        report.verdicts.push(record);
        let passed = tests == TestsVerdict::Pass;
        let test_report = TestReport {
            iteration: i,
            passed,
            session: tester.id.clone(),
            output: tester.report_text().to_string(),
        };
        fs::write(
            workspace.join(TEST_REPORT_FILE),
            serde_json::to_string_pretty(&test_report).expect("test report serializes"),
        )?;
        if passed {
            report.passed = true;
            break;
        }
        findings = vec![Finding::critical(TESTS_DIR, format!("tests failed:\n{}", tester.report_text().trim()))];
    }
    if !report.passed {
        report.warning = Some(format!(
            "harness loop reached {i_max} iterations without passing tests; continuing with the latest harness"
        ));
    }
    fs::write(
        workspace.join(VERDICT_LOG_FILE),
        serde_json::to_string_pretty(&report.verdicts).expect("verdicts serialize"),
    )?;
    Ok(report)
}
