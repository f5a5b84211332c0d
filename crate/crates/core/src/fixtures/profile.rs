//! Scripted campaign profiles stored as data under `fixtures/`.
//!
//! ```text
//! fixtures/
//!   common/scripts/<role>.yaml      scripts shared by every profile
//!   <profile>/profile.yaml          campaign settings and expectations
//!   <profile>/outcomes.yaml         simulated job outcomes
//!   <profile>/scripts/<role>.yaml   per-profile overrides
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::outcomes::OutcomeTable;
use super::script::{ScriptError, ScriptedFactory};
use crate::board::Policy;
use crate::dispatcher::DispatcherConfig;

pub const PROFILES: [&str; 5] = [
    "happy_path",
    "failure_burst",
    "budget_exhaustion",
    "convergence_stall",
    "supervisor_storm",
];

/// The fixture tree shipped in this repository.
pub fn fixtures_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

#[derive(Debug, thiserror::Error)]
pub enum ProfileError {
    #[error("unknown profile `{0}`")]
    Unknown(String),
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What a correct run of the profile produces.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Expectations {
    /// SHA-256 of the encoded journal.
    pub digest: Option<String>,
    pub accepted: Option<u32>,
    pub analyzed: Option<u32>,
    pub interventions: Option<u32>,
    pub halt_reason_prefix: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSpec {
    #[serde(default)]
    pub description: String,
    pub domain: String,
    #[serde(default)]
    pub objective: String,
    pub budget: u32,
    #[serde(default = "default_fleet")]
    pub fleet: u32,
    #[serde(default)]
    pub policy: Policy,
    #[serde(default)]
    pub dispatcher: DispatcherConfig,
    #[serde(default)]
    pub skip_phase1: bool,
    #[serde(default)]
    pub expected: Expectations,
}

fn default_fleet() -> u32 {
    4
}

pub struct Profile {
    pub name: String,
    pub dir: PathBuf,
    pub spec: ProfileSpec,
    pub outcomes: OutcomeTable,
    pub scripts: ScriptedFactory,
}

fn read_yaml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ProfileError> {
    let text = fs::read_to_string(path)?;
    serde_yaml::from_str(&text).map_err(|e| ProfileError::Invalid {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

impl Profile {
    /// Loads `name` from `root`, layering its scripts over the common ones.
    pub fn load(root: &Path, name: &str) -> Result<Self, ProfileError> {
        let dir = root.join(name);
        if !dir.join("profile.yaml").is_file() {
            return Err(ProfileError::Unknown(name.to_string()));
        }
        let spec: ProfileSpec = read_yaml(&dir.join("profile.yaml"))?;
        let outcomes: OutcomeTable = read_yaml(&dir.join("outcomes.yaml"))?;
        let mut scripts = ScriptedFactory::new([]);
        let common = root.join("common/scripts");
        if common.is_dir() {
            scripts.load_dir(&common)?;
        }
        if dir.join("scripts").is_dir() {
            scripts.load_dir(&dir.join("scripts"))?;
        }
        Ok(Self {
            name: name.to_string(),
            dir,
            spec,
            outcomes,
            scripts,
        })
    }

    pub fn shipped(name: &str) -> Result<Self, ProfileError> {
        Self::load(&fixtures_root(), name)
    }
}
