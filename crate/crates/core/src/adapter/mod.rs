//! The eleven-file domain adapter: manifest, domain knowledge and the nine
//! role prompts, plus an append-only checkpoint history of every edit.

mod context;
mod manifest;
mod resolve;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use context::{assemble_context, context_for, ContextDoc};
pub use manifest::{placeholder, ExperimentStructure, Manifest, ManifestFormat};
pub use resolve::{resolution_path, BuiltinSet, ResolutionPath};

pub const ADAPTER_DIR: &str = "adapter";
pub const CHECKPOINT_FILE: &str = "checkpoints.journal";

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("unknown adapter file `{0}`")]
    UnknownFile(String),
    #[error("unknown role `{0}`")]
    UnknownRole(String),
    #[error("checkpoint reason is empty")]
    EmptyReason,
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("adapter is incomplete: {0:?}")]
    Incomplete(Vec<AdapterIssue>),
    #[error("generation finished without all adapter files: missing {0:?}")]
    GenerationIncomplete(Vec<AdapterFile>),
    #[error("unknown checkpoint {0}")]
    UnknownCheckpoint(u32),
    #[error("built-in adapter `{0}` not found")]
    UnknownBuiltin(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterFile {
    Manifest,
    DomainKnowledge,
    Phase1Explorer,
    Phase2Builder,
    Phase2Critic,
    Phase2Tester,
    Phase3Strategist,
    Phase3Worker,
    Phase3Supervisor,
    Phase0Customizer,
    Phase0Generator,
}

impl AdapterFile {
    pub const ALL: [AdapterFile; 11] = [
        AdapterFile::Manifest,
        AdapterFile::DomainKnowledge,
        AdapterFile::Phase1Explorer,
        AdapterFile::Phase2Builder,
        AdapterFile::Phase2Critic,
        AdapterFile::Phase2Tester,
        AdapterFile::Phase3Strategist,
        AdapterFile::Phase3Worker,
        AdapterFile::Phase3Supervisor,
        AdapterFile::Phase0Customizer,
        AdapterFile::Phase0Generator,
    ];

    pub fn canonical(self) -> &'static str {
        match self {
            AdapterFile::Manifest => "manifest",
            AdapterFile::DomainKnowledge => "domain_knowledge",
            AdapterFile::Phase1Explorer => "phase1_explorer",
            AdapterFile::Phase2Builder => "phase2_builder",
            AdapterFile::Phase2Critic => "phase2_critic",
            AdapterFile::Phase2Tester => "phase2_tester",
            AdapterFile::Phase3Strategist => "phase3_strategist",
            AdapterFile::Phase3Worker => "phase3_worker",
            AdapterFile::Phase3Supervisor => "phase3_supervisor",
            AdapterFile::Phase0Customizer => "phase0_customizer",
            AdapterFile::Phase0Generator => "phase0_generator",
        }
    }

    /// File name inside `adapter/`. The manifest's name depends on its format.
    pub fn file_name(self, format: ManifestFormat) -> String {
        match self {
            AdapterFile::Manifest => format.file_name().to_string(),
            other => format!("{}.md", other.canonical()),
        }
    }
}

impl fmt::Display for AdapterFile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.canonical())
    }
}

impl FromStr for AdapterFile {
    type Err = AdapterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let stem = s
            .strip_suffix(".md")
            .or_else(|| s.strip_suffix(".yaml"))
            .or_else(|| s.strip_suffix(".json"))
            .unwrap_or(s);
        AdapterFile::ALL
            .into_iter()
            .find(|f| f.canonical() == stem)
            .ok_or_else(|| AdapterError::UnknownFile(s.to_string()))
    }
}

/// Agent roles. Each maps to one prompt file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Customizer,
    Generator,
    Explorer,
    Builder,
    Critic,
    Tester,
    Strategist,
    Worker,
    Supervisor,
}

impl Role {
    pub const ALL: [Role; 9] = [
        Role::Customizer,
        Role::Generator,
        Role::Explorer,
        Role::Builder,
        Role::Critic,
        Role::Tester,
        Role::Strategist,
        Role::Worker,
        Role::Supervisor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Customizer => "customizer",
            Role::Generator => "generator",
            Role::Explorer => "explorer",
            Role::Builder => "builder",
            Role::Critic => "critic",
            Role::Tester => "tester",
            Role::Strategist => "strategist",
            Role::Worker => "worker",
            Role::Supervisor => "supervisor",
        }
    }

    pub fn prompt_file(self) -> AdapterFile {
        match self {
            Role::Customizer => AdapterFile::Phase0Customizer,
            Role::Generator => AdapterFile::Phase0Generator,
            Role::Explorer => AdapterFile::Phase1Explorer,
            Role::Builder => AdapterFile::Phase2Builder,
            Role::Critic => AdapterFile::Phase2Critic,
            Role::Tester => AdapterFile::Phase2Tester,
            Role::Strategist => AdapterFile::Phase3Strategist,
            Role::Worker => AdapterFile::Phase3Worker,
            Role::Supervisor => AdapterFile::Phase3Supervisor,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = AdapterError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| AdapterError::UnknownRole(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "issue", content = "detail", rename_all = "snake_case")]
pub enum AdapterIssue {
    MissingFile(AdapterFile),
    InvalidManifest(String),
    NoMetrics,
    NoPrimary,
    MultiplePrimary,
    EmptyDomainKnowledge,
}

/// Checks a set of adapter files. An empty list means the adapter is usable.
pub fn validate_files(files: &BTreeMap<AdapterFile, String>, format: ManifestFormat) -> Vec<AdapterIssue> {
    let mut issues: Vec<AdapterIssue> = AdapterFile::ALL
        .into_iter()
        .filter(|f| !files.contains_key(f))
        .map(AdapterIssue::MissingFile)
        .collect();
    if let Some(text) = files.get(&AdapterFile::Manifest) {
        match Manifest::parse(text, format) {
            Err(e) => issues.push(AdapterIssue::InvalidManifest(e.to_string())),
            Ok(m) => {
                let primaries = m.metrics.iter().filter(|d| d.primary).count();
                if m.metrics.is_empty() {
                    issues.push(AdapterIssue::NoMetrics);
                } else if primaries == 0 {
                    issues.push(AdapterIssue::NoPrimary);
                } else if primaries > 1 {
                    issues.push(AdapterIssue::MultiplePrimary);
                }
            }
        }
    }
    if files
        .get(&AdapterFile::DomainKnowledge)
        .is_some_and(|t| t.trim().is_empty())
    {
        issues.push(AdapterIssue::EmptyDomainKnowledge);
    }
    issues
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchAuthor {
    Customizer,
    Generator,
    Supervisor,
    Operator,
}

/// One edit to one adapter file. `previous` and `content` make the history
/// replayable in both directions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub id: u32,
    pub file: AdapterFile,
    pub reason: String,
    pub author: PatchAuthor,
    pub previous: Option<String>,
    pub content: String,
    #[serde(default)]
    pub commit: Option<String>,
}

/// Replays checkpoints over an initial file set.
pub fn replay(
    initial: &BTreeMap<AdapterFile, String>,
    checkpoints: &[Checkpoint],
) -> BTreeMap<AdapterFile, String> {
    let mut files = initial.clone();
    for cp in checkpoints {
        files.insert(cp.file, cp.content.clone());
    }
    files
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterBundle {
    pub manifest: Manifest,
    pub format: ManifestFormat,
    files: BTreeMap<AdapterFile, String>,
    checkpoints: Vec<Checkpoint>,
    root: Option<PathBuf>,
    git: bool,
}

impl AdapterBundle {
    /// Builds a bundle from in-memory files. All eleven must be present and
    /// the manifest valid.
    pub fn from_files(files: BTreeMap<AdapterFile, String>, format: ManifestFormat) -> Result<Self, AdapterError> {
        let issues = validate_files(&files, format);
        if !issues.is_empty() {
            return Err(AdapterError::Incomplete(issues));
        }
        let manifest = Manifest::parse(&files[&AdapterFile::Manifest], format)?;
        Ok(Self {
            manifest,
            format,
            files,
            checkpoints: Vec::new(),
            root: None,
            git: false,
        })
    }

    /// Reads whatever adapter files exist in `dir`, without validating.
    pub fn read_files(dir: &Path) -> Result<(BTreeMap<AdapterFile, String>, ManifestFormat), AdapterError> {
        let format = detect_format(dir).unwrap_or(ManifestFormat::Yaml);
        let mut files = BTreeMap::new();
        for f in AdapterFile::ALL {
            let path = dir.join(f.file_name(format));
            if path.is_file() {
                files.insert(f, fs::read_to_string(path)?);
            }
        }
        Ok((files, format))
    }

    /// Loads a complete adapter from `dir` (normally `<workspace>/adapter`),
    /// including its checkpoint history.
    pub fn load(dir: &Path) -> Result<Self, AdapterError> {
        let (files, format) = Self::read_files(dir)?;
        let mut bundle = Self::from_files(files, format)?;
        let journal = dir.join(CHECKPOINT_FILE);
        if journal.is_file() {
            for (i, line) in fs::read_to_string(&journal)?.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let cp: Checkpoint = serde_json::from_str(line).map_err(|e| {
                    AdapterError::InvalidManifest(format!("{CHECKPOINT_FILE} line {}: {e}", i + 1))
                })?;
                bundle.checkpoints.push(cp);
            }
        }
        bundle.root = Some(dir.to_path_buf());
        Ok(bundle)
    }

    /// Writes all files into `dir` and binds the bundle to it; later patches
    /// are written through.
    pub fn save_to(&mut self, dir: &Path) -> Result<(), AdapterError> {
        fs::create_dir_all(dir)?;
        for (f, text) in &self.files {
            fs::write(dir.join(f.file_name(self.format)), text)?;
        }
        let mut journal = String::new();
        for cp in &self.checkpoints {
            journal.push_str(&serde_json::to_string(cp).expect("checkpoint serializes"));
            journal.push('\n');
        }
        fs::write(dir.join(CHECKPOINT_FILE), journal)?;
        self.root = Some(dir.to_path_buf());
        Ok(())
    }

    /// Commit every patch with `git` in the directory holding the adapter.
    pub fn enable_git(&mut self, on: bool) {
        self.git = on;
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn file(&self, f: AdapterFile) -> &str {
        &self.files[&f]
    }

    pub fn files(&self) -> &BTreeMap<AdapterFile, String> {
        &self.files
    }

    pub fn checkpoints(&self) -> &[Checkpoint] {
        &self.checkpoints
    }

    pub fn validate(&self) -> Vec<AdapterIssue> {
        validate_files(&self.files, self.format)
    }

    /// Files as they were before the first checkpoint.
    pub fn initial_files(&self) -> BTreeMap<AdapterFile, String> {
        let mut files = self.files.clone();
        for cp in self.checkpoints.iter().rev() {
            match &cp.previous {
                Some(p) => files.insert(cp.file, p.clone()),
                None => files.remove(&cp.file),
            };
        }
        files
    }

    /// Replaces one file and records a checkpoint. Returns the checkpoint id.
    pub fn patch_file(
        &mut self,
        name: &str,
        content: &str,
        reason: &str,
        author: PatchAuthor,
    ) -> Result<u32, AdapterError> {
        let file: AdapterFile = name.parse()?;
        self.patch(file, content, reason, author)
    }

    pub fn patch(
        &mut self,
        file: AdapterFile,
        content: &str,
        reason: &str,
        author: PatchAuthor,
    ) -> Result<u32, AdapterError> {
        if reason.trim().is_empty() {
            return Err(AdapterError::EmptyReason);
        }
        if file == AdapterFile::Manifest {
            let m = Manifest::parse(content, self.format)?;
            m.metric_spec()?;
            self.manifest = m;
        }
        let id = self.checkpoints.len() as u32 + 1;
        let previous = self.files.insert(file, content.to_string());
        let mut cp = Checkpoint {
            id,
            file,
            reason: reason.to_string(),
            author,
            previous,
            content: content.to_string(),
            commit: None,
        };
        if let Some(dir) = self.root.clone() {
            let path = dir.join(file.file_name(self.format));
            fs::write(&path, content)?;
            if self.git {
                cp.commit = git_commit(&dir, &path, reason);
            }
            let mut journal = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join(CHECKPOINT_FILE))?;
            writeln!(journal, "{}", serde_json::to_string(&cp).expect("checkpoint serializes"))?;
        }
        self.checkpoints.push(cp);
        Ok(id)
    }

    /// Restores every file to its content right after checkpoint `id`
    /// (`0` means the initial bundle). The restore is itself recorded as
    /// new checkpoints, so history stays append-only.
    pub fn revert_to(&mut self, id: u32, author: PatchAuthor) -> Result<Vec<u32>, AdapterError> {
        if id as usize > self.checkpoints.len() {
            return Err(AdapterError::UnknownCheckpoint(id));
        }
        let target = replay(&self.initial_files(), &self.checkpoints[..id as usize]);
        let changed: Vec<(AdapterFile, String)> = target
            .into_iter()
            .filter(|(f, text)| self.files.get(f) != Some(text))
            .collect();
        let reason = format!("revert to checkpoint {id}");
        changed
            .into_iter()
            .map(|(f, text)| self.patch(f, &text, &reason, author))
            .collect()
    }
}

fn detect_format(dir: &Path) -> Option<ManifestFormat> {
    [ManifestFormat::Yaml, ManifestFormat::Json]
        .into_iter()
        .find(|f| dir.join(f.file_name()).is_file())
}

/// Whether `dir` holds an adapter manifest in either format.
pub fn has_manifest(dir: &Path) -> bool {
    detect_format(dir).is_some()
}

fn git_commit(dir: &Path, path: &Path, message: &str) -> Option<String> {
    let git = |args: &[&str]| {
        Command::new("git")
            .arg("-C")
            .arg(dir)
            .args(["-c", "user.name=campaign", "-c", "user.email=campaign@localhost"])
            .args(args)
            .output()
            .ok()
            .filter(|o| o.status.success())
    };
    let path = path.display().to_string();
    git(&["add", "--", &path])?;
    git(&["commit", "-q", "-m", message, "--", &path])?;
    let out = git(&["rev-parse", "HEAD"])?;
    Some(String::from_utf8_lossy(&out.stdout).trim().to_string())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn sample_files() -> BTreeMap<AdapterFile, String> {
        AdapterFile::ALL
            .into_iter()
            .map(|f| {
                let text = match f {
                    AdapterFile::Manifest => {
                        "domain: toy\nmetrics:\n  - name: loss\n    direction: min\n    primary: true\n".to_string()
                    }
                    other => format!("# {other}\n"),
                };
                (f, text)
            })
            .collect()
    }

    #[test]
    fn complete_bundle_validates() {
        assert_eq!(validate_files(&sample_files(), ManifestFormat::Yaml), vec![]);
    }

    #[test]
    fn missing_tester_prompt() {
        let mut files = sample_files();
        files.remove(&AdapterFile::Phase2Tester);
        assert_eq!(
            validate_files(&files, ManifestFormat::Yaml),
            vec![AdapterIssue::MissingFile(AdapterFile::Phase2Tester)]
        );
    }

    #[test]
    fn two_primaries() {
        let mut files = sample_files();
        files.insert(
            AdapterFile::Manifest,
            "domain: toy\nmetrics:\n  - {name: a, direction: min, primary: true}\n  - {name: b, direction: max, primary: true}\n".into(),
        );
        assert_eq!(
            validate_files(&files, ManifestFormat::Yaml),
            vec![AdapterIssue::MultiplePrimary]
        );
    }

    #[test]
    fn patch_and_revert_restore_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = AdapterBundle::from_files(sample_files(), ManifestFormat::Yaml).unwrap();
        b.save_to(dir.path()).unwrap();
        let original = b.file(AdapterFile::DomainKnowledge).to_string();
        let id = b
            .patch_file(
                "domain_knowledge",
                "# domain_knowledge\nModel functions must accept keyword arguments.\n",
                "kwargs signature",
                PatchAuthor::Supervisor,
            )
            .unwrap();
        assert_eq!(id, 1);
        b.revert_to(0, PatchAuthor::Operator).unwrap();
        assert_eq!(b.file(AdapterFile::DomainKnowledge), original);
        let on_disk = fs::read_to_string(dir.path().join("domain_knowledge.md")).unwrap();
        assert_eq!(on_disk, original);
        let reloaded = AdapterBundle::load(dir.path()).unwrap();
        assert_eq!(reloaded.checkpoints(), b.checkpoints());
        assert_eq!(replay(&reloaded.initial_files(), reloaded.checkpoints()), *b.files());
    }

    #[test]
    fn patch_errors() {
        let mut b = AdapterBundle::from_files(sample_files(), ManifestFormat::Yaml).unwrap();
        assert!(matches!(
            b.patch_file("domain_knowledge", "x", "  ", PatchAuthor::Supervisor),
            Err(AdapterError::EmptyReason)
        ));
        assert!(matches!(
            b.patch_file("runner.py", "x", "r", PatchAuthor::Supervisor),
            Err(AdapterError::UnknownFile(_))
        ));
    }

    #[test]
    fn roles_parse() {
        assert_eq!("strategist".parse::<Role>().unwrap(), Role::Strategist);
        assert!(matches!("oracle".parse::<Role>(), Err(AdapterError::UnknownRole(_))));
    }
}
