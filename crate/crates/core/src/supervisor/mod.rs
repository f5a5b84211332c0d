//! Health supervision: artifact checks between phases, a sliding window of
//! experiment outcomes, and diagnosis sessions that patch domain knowledge.

mod artifacts;
mod window;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapter::{AdapterBundle, AdapterError, AdapterFile, ContextDoc, PatchAuthor, Role, context_for};
use crate::agent::{Runtime, SessionRequest};
use crate::board::{Board, ExperimentId};
use crate::tools::confine;

pub use artifacts::{
    plan_status, validate_phase_artifacts, ArtifactIssue, PlanStatus, TestReport, DATA_REPORT_DIR, DATA_REPORT_FILES,
    HARNESS_DIR, HARNESS_FILES, LEARNINGS_FILE, PLAN_FILE, TESTS_DIR, TEST_REPORT_FILE,
};
pub use window::{EmptyWindow, HealthMonitor, HealthWindow, SupervisorConfig, WindowEntry};

pub const SUPERVISOR_REPORT_DIR: &str = "reports/supervisor";

#[derive(Debug, thiserror::Error)]
pub enum SupervisorError {
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One proposed append.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchProposal {
    pub target: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SupervisorReply {
    pub diagnosis: String,
    pub patches: Vec<PatchProposal>,
}

/// Reads `DIAGNOSIS:` and `APPEND <file>:` ... `END` blocks. An unterminated
/// block runs to the end of the text.
pub fn parse_supervisor_reply(text: &str) -> SupervisorReply {
    let mut reply = SupervisorReply::default();
    let mut open: Option<PatchProposal> = None;
    for line in text.lines() {
        if let Some(p) = open.as_mut() {
            if line.trim() == "END" {
                reply.patches.push(open.take().expect("open block"));
            } else {
                p.text.push_str(line);
                p.text.push('\n');
            }
            continue;
        }
        let t = line.trim();
        if let Some(rest) = strip_prefix_ci(t, "DIAGNOSIS:") {
            if reply.diagnosis.is_empty() {
                reply.diagnosis = rest.trim().to_string();
            }
        } else if let Some(rest) = strip_prefix_ci(t, "APPEND ") {
            let target = rest.trim().trim_end_matches(':').trim().to_string();
            open = Some(PatchProposal {
                target,
                text: String::new(),
            });
        }
    }
    if let Some(p) = open {
        reply.patches.push(p);
    }
    reply.patches.retain(|p| !p.text.trim().is_empty());
    reply
}

fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    let head = s.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| &s[prefix.len()..])
}

/// Log tail of one failed experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureExcerpt {
    pub experiment: ExperimentId,
    pub name: String,
    pub log: String,
}

/// Latest attempt log of every failed experiment in the window.
pub fn collect_failures(board: &Board, window: &HealthWindow, workspace: &Path, bytes: usize) -> Vec<FailureExcerpt> {
    window
        .entries()
        .filter(|e| e.failed)
        .filter_map(|e| board.experiment(&e.experiment))
        .map(|exp| {
            let logs = workspace.join("experiments").join(&exp.name).join("logs");
            let latest = fs::read_dir(&logs).ok().and_then(|d| {
                d.filter_map(Result::ok)
                    .map(|e| e.path())
                    .filter(|p| p.is_file())
                    .max()
            });
            let log = latest
                .and_then(|p| fs::read(p).ok())
                .map(|b| {
                    let start = b.len().saturating_sub(bytes);
                    String::from_utf8_lossy(&b[start..]).into_owned()
                })
                .unwrap_or_else(|| "(no job log; the worker session failed)".into());
            FailureExcerpt {
                experiment: exp.id.clone(),
                name: exp.name.clone(),
                log,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterventionOutcome {
    Patched,
    NoPatchProposed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub number: u32,
    pub session: String,
    pub failure_rate: f64,
    pub diagnosis: String,
    pub outcome: InterventionOutcome,
    /// Adapter checkpoints created, in order.
    pub checkpoints: Vec<u32>,
    /// Workspace files appended to (harness patches).
    pub files: Vec<String>,
    /// Proposed targets that were refused.
    pub refused: Vec<String>,
    pub record_path: String,
}

impl Intervention {
    pub fn patch_applied(&self) -> bool {
        self.outcome == InterventionOutcome::Patched
    }
}

/// Runs one supervisor session and applies what it proposes. Writes the
/// record under `reports/supervisor/NNN.md`.
pub fn intervene(
    runtime: &Runtime,
    bundle: &mut AdapterBundle,
    workspace: &Path,
    config: &SupervisorConfig,
    number: u32,
    failure_rate: f64,
    failures: &[FailureExcerpt],
) -> Result<Intervention, SupervisorError> {
    let mut excerpts = format!("failure_rate: {failure_rate:.2}\nintervention: {number}\n\n");
    for f in failures {
        let _ = writeln!(excerpts, "### {} ({})\n```\n{}\n```\n", f.name, f.experiment, f.log.trim_end());
    }
    let extras = vec![ContextDoc::new("supervisor:failures", "Recent failures", excerpts)];
    let session = runtime.run_session(SessionRequest::new(Role::Supervisor, context_for(bundle, Role::Supervisor, extras)));
    let reply = parse_supervisor_reply(session.report_text());
    let diagnosis = if reply.diagnosis.is_empty() {
        "unspecified systemic failure".to_string()
    } else {
        reply.diagnosis.clone()
    };

    let mut checkpoints = Vec::new();
    let mut files = Vec::new();
    let mut refused = Vec::new();
    let mut diff = String::new();
    for p in &reply.patches {
        let adapter_file = p.target.parse::<AdapterFile>().ok();
        if adapter_file == Some(AdapterFile::DomainKnowledge) {
            let current = bundle.file(AdapterFile::DomainKnowledge);
            let next = format!("{}\n\n{}\n", current.trim_end(), p.text.trim_end());
            checkpoints.push(bundle.patch(AdapterFile::DomainKnowledge, &next, &diagnosis, PatchAuthor::Supervisor)?);
        } else if config.allow_harness_patches && p.target.starts_with("harness/") {
            match confine(workspace, &p.target) {
                Ok(path) => {
                    let mut text = fs::read_to_string(&path).unwrap_or_default();
                    text.push_str(&p.text);
                    if let Some(dir) = path.parent() {
                        fs::create_dir_all(dir)?;
                    }
                    fs::write(&path, text)?;
                    files.push(p.target.clone());
                }
                Err(_) => refused.push(p.target.clone()),
            }
        } else {
            refused.push(p.target.clone());
            continue;
        }
        let _ = writeln!(diff, "--- {}", p.target);
        for l in p.text.lines() {
            let _ = writeln!(diff, "+{l}");
        }
    }
    let outcome = if checkpoints.is_empty() && files.is_empty() {
        InterventionOutcome::NoPatchProposed
    } else {
        InterventionOutcome::Patched
    };

    let record_path = format!("{SUPERVISOR_REPORT_DIR}/{number:03}.md");
    let mut record = format!(
        "# Supervisor intervention {number:03}\n\nsession: {}\nfailure_rate: {failure_rate:.2}\noutcome: {}\ncheckpoints: {}\n\n## Diagnosis\n\n{diagnosis}\n\n## Patch\n\n",
        session.id,
        match outcome {
            InterventionOutcome::Patched => "patched",
            InterventionOutcome::NoPatchProposed => "no patch proposed",
        },
        if checkpoints.is_empty() {
            "none".to_string()
        } else {
            checkpoints.iter().map(u32::to_string).collect::<Vec<_>>().join(", ")
        },
    );
    if diff.is_empty() {
        record.push_str("(none)\n");
    } else {
        let _ = write!(record, "```diff\n{diff}```\n");
    }
    if !refused.is_empty() {
        let _ = write!(record, "\nRefused targets: {}\n", refused.join(", "));
    }
    let full = workspace.join(&record_path);
    fs::create_dir_all(full.parent().expect("has parent"))?;
    fs::write(full, record)?;

    Ok(Intervention {
        number,
        session: session.id,
        failure_rate,
        diagnosis,
        outcome,
        checkpoints,
        files,
        refused,
        record_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_append_blocks() {
        let r = parse_supervisor_reply(
            "Looked at logs.\nDIAGNOSIS: forward() rejects keyword arguments\nAPPEND domain_knowledge.md:\n- entry points must accept keyword arguments\nEND\n",
        );
        assert_eq!(r.diagnosis, "forward() rejects keyword arguments");
        assert_eq!(
            r.patches,
            vec![PatchProposal {
                target: "domain_knowledge.md".into(),
                text: "- entry points must accept keyword arguments\n".into()
            }]
        );
    }

    #[test]
    fn no_patch() {
        let r = parse_supervisor_reply("diagnosis: flaky node\nNO PATCH\n");
        assert_eq!(r.diagnosis, "flaky node");
        assert!(r.patches.is_empty());
    }

    #[test]
    fn unterminated_block_runs_to_end() {
        let r = parse_supervisor_reply("APPEND domain_knowledge.md:\n- a\n- b");
        assert_eq!(r.patches[0].text, "- a\n- b\n");
    }
}
