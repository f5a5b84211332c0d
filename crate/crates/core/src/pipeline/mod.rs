//! Phases 0 to 2: adapter resolution, exploration, and the harness loop.
//!
//! Each phase runs one session at a time through the [`Runtime`]. Phase
//! functions do not touch the board; they return reports with warnings that
//! the campaign driver journals.

mod phase2;
mod verdict;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapter::{
    context_for, AdapterBundle, AdapterError, AdapterFile, AdapterIssue, BuiltinSet, ContextDoc, ResolutionPath, Role,
    ADAPTER_DIR,
};
use crate::adapter::resolution_path;
use crate::agent::{Runtime, SessionRequest};
use crate::supervisor::{validate_phase_artifacts, ArtifactIssue, DATA_REPORT_DIR, DATA_REPORT_FILES, LEARNINGS_FILE};
use crate::board::Phase;

pub use phase2::{run_phase2, Phase2Report, VerdictRecord, VERDICT_LOG_FILE};
pub use verdict::{parse_tests_verdict, parse_verdict, CriticVerdict, Finding, Severity, TestsVerdict, Verdict};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("adapter generation incomplete after retry: {0:?}")]
    GenerationIncomplete(Vec<AdapterIssue>),
    #[error("phase 1 deliverables missing after retry: {0:?}")]
    DeliverablesMissing(Vec<ArtifactIssue>),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What the campaign is about, as given by the operator.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CampaignBrief {
    /// Matched against built-in adapter names.
    pub domain: String,
    pub objective: String,
    #[serde(default)]
    pub dataset: Option<String>,
}

impl CampaignBrief {
    pub fn doc(&self) -> ContextDoc {
        let mut body = format!("domain: {}\nobjective: {}\n", self.domain, self.objective);
        if let Some(d) = &self.dataset {
            body.push_str(&format!("dataset: {d}\n"));
        }
        ContextDoc::new("campaign", "Campaign", body)
    }
}

#[derive(Debug)]
pub struct Phase0Report {
    pub path: ResolutionPath,
    pub bundle: AdapterBundle,
    pub sessions: Vec<String>,
    pub warnings: Vec<String>,
}

fn generator_context(builtins: &BuiltinSet, brief: &CampaignBrief, gap: Option<&[AdapterIssue]>) -> Vec<ContextDoc> {
    // The generator prompt ships with every built-in; any copy will do.
    let prompt = builtins
        .names()
        .iter()
        .find_map(|n| builtins.files(n).ok())
        .and_then(|(files, _)| files.get(&AdapterFile::Phase0Generator).cloned())
        .unwrap_or_else(|| "Write a complete adapter into `adapter/` and report when all eleven files exist.".into());
    let mut docs = vec![
        ContextDoc::new("adapter:phase0_generator", "phase0_generator", prompt),
        brief.doc(),
    ];
    if let Some(issues) = gap {
        let body: String = issues.iter().map(|i| format!("- {i:?}\n")).collect();
        docs.push(ContextDoc::new("retry", "Still missing", body));
    }
    docs
}

/// Phase 0. Resumes the workspace adapter, customizes a built-in whose name
/// equals `brief.domain`, or has a generator session write one. Generation
/// gets one retry; a customizer that breaks the bundle is rolled back to the
/// built-in.
pub fn run_phase0(
    runtime: &Runtime,
    workspace: &Path,
    brief: &CampaignBrief,
    builtins: &BuiltinSet,
) -> Result<Phase0Report, PipelineError> {
    let dir = workspace.join(ADAPTER_DIR);
    let path = resolution_path(workspace, &brief.domain, builtins.names());
    let mut sessions = Vec::new();
    let mut warnings = Vec::new();
    let bundle = match path {
        ResolutionPath::Resume => AdapterBundle::load(&dir)?,
        ResolutionPath::Customize => {
            let mut bundle = builtins.bundle(&brief.domain)?;
            bundle.save_to(&dir)?;
            let ctx = context_for(&bundle, Role::Customizer, vec![brief.doc()]);
            sessions.push(runtime.run_session(SessionRequest::new(Role::Customizer, ctx)).id);
            match AdapterBundle::load(&dir) {
                Ok(b) if b.validate().is_empty() => b,
                other => {
                    let why = match other {
                        Ok(b) => format!("{:?}", b.validate()),
                        Err(e) => e.to_string(),
                    };
                    warnings.push(format!("customized adapter invalid ({why}); using built-in `{}`", brief.domain));
                    let mut b = builtins.bundle(&brief.domain)?;
                    b.save_to(&dir)?;
                    b
                }
            }
        }
        ResolutionPath::Generate => {
            let mut gap: Option<Vec<AdapterIssue>> = None;
            let mut result = None;
            for _ in 0..2 {
                let ctx = generator_context(builtins, brief, gap.as_deref());
                sessions.push(runtime.run_session(SessionRequest::new(Role::Generator, ctx)).id);
                let (files, format) = AdapterBundle::read_files(&dir)?;
                match AdapterBundle::from_files(files, format) {
                    Ok(_) => {
                        result = Some(AdapterBundle::load(&dir)?);
                        break;
                    }
                    Err(AdapterError::Incomplete(issues)) => gap = Some(issues),
                    Err(e) => gap = Some(vec![AdapterIssue::InvalidManifest(e.to_string())]),
                }
            }
            match result {
                Some(b) => b,
                None => return Err(PipelineError::GenerationIncomplete(gap.unwrap_or_default())),
            }
        }
    };
    Ok(Phase0Report {
        path,
        bundle,
        sessions,
        warnings,
    })
}

/// Names of the built-in adapters, for resolution without a [`BuiltinSet`].
pub fn builtin_names(builtins: &BuiltinSet) -> BTreeSet<String> {
    builtins.names().clone()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase1Report {
    pub sessions: Vec<String>,
    pub skipped: bool,
    /// Issues left after the retry that do not block phase 2.
    pub issues: Vec<ArtifactIssue>,
    pub warnings: Vec<String>,
}

fn blocking(issue: &ArtifactIssue) -> bool {
    match issue {
        ArtifactIssue::Missing { path } | ArtifactIssue::Empty { path } => {
            path == LEARNINGS_FILE || path.starts_with(DATA_REPORT_DIR)
        }
        _ => false,
    }
}

/// Phase 1. One explorer session; if the deliverables are incomplete, one
/// more with the gap named. Missing learnings or data report after that is
/// fatal; plan problems are kept as warnings. With `skip`, empty
/// deliverables are written and no session runs.
pub fn run_phase1(
    runtime: &Runtime,
    bundle: &AdapterBundle,
    workspace: &Path,
    brief: &CampaignBrief,
    skip: bool,
) -> Result<Phase1Report, PipelineError> {
    if skip {
        fs::create_dir_all(workspace.join(DATA_REPORT_DIR))?;
        for rel in std::iter::once(LEARNINGS_FILE.to_string())
            .chain(DATA_REPORT_FILES.iter().map(|f| format!("{DATA_REPORT_DIR}/{f}")))
        {
            let p = workspace.join(rel);
            if !p.exists() {
                fs::write(p, "")?;
            }
        }
        return Ok(Phase1Report {
            sessions: Vec::new(),
            skipped: true,
            issues: Vec::new(),
            warnings: vec!["phase 1 skipped; deliverables stubbed empty".into()],
        });
    }
    let mut sessions = Vec::new();
    let mut issues = Vec::new();
    for attempt in 0..2 {
        let mut extras = vec![brief.doc()];
        if attempt > 0 {
            let body: String = issues.iter().map(|i| format!("- {i:?}\n")).collect();
            extras.push(ContextDoc::new("retry", "Deliverables still missing", body));
        }
        let ctx = context_for(bundle, Role::Explorer, extras);
        sessions.push(runtime.run_session(SessionRequest::new(Role::Explorer, ctx)).id);
        issues = validate_phase_artifacts(Phase::Phase1, workspace);
        if issues.is_empty() {
            break;
        }
    }
    let fatal: Vec<ArtifactIssue> = issues.iter().filter(|i| blocking(i)).cloned().collect();
    if !fatal.is_empty() {
        return Err(PipelineError::DeliverablesMissing(fatal));
    }
    let warnings = issues.iter().map(|i| format!("phase 1 artifact issue: {i:?}")).collect();
    Ok(Phase1Report {
        sessions,
        skipped: false,
        issues,
        warnings,
    })
}
