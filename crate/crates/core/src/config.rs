//! Campaign configuration file (TOML).
//!
//! ```toml
//! [campaign]
//! id = "ett-forecast"
//! workspace = "runs/ett"
//! domain = "time_series"
//! objective = "Beat the seasonal-naive MASE on ETTh1"
//! budget = 50
//!
//! [policy]
//! tau = 0.4
//! convergence_window = 20
//!
//! [backend]
//! kind = "remote"
//!
//! [cluster]
//! kind = "slurm"
//! fleet = 8
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::board::Policy;
use crate::dispatcher::DispatcherConfig;
use crate::pipeline::CampaignBrief;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSection {
    pub id: String,
    /// Relative paths resolve against the config file's directory.
    pub workspace: PathBuf,
    pub domain: String,
    #[serde(default)]
    pub objective: String,
    #[serde(default)]
    pub dataset: Option<String>,
    pub budget: u32,
    #[serde(default)]
    pub skip_phase1: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    /// Deterministic scripts from a fixture profile.
    Scripted {
        profile: String,
        /// Fixture root; defaults to the shipped `fixtures/`.
        #[serde(default)]
        fixtures: Option<PathBuf>,
    },
    /// Chat-completions endpoint. Unset fields fall back to the
    /// `CAMPAIGN_BACKEND_*` environment variables.
    Remote {
        #[serde(default)]
        url: Option<String>,
        #[serde(default)]
        model: Option<String>,
        /// Name of the environment variable holding the key.
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_s: u64,
    },
}

fn default_timeout() -> u64 {
    600
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Remote {
            url: None,
            model: None,
            api_key_env: None,
            timeout_s: default_timeout(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterKind {
    /// Outcome table from the scripted profile, on the campaign clock.
    Sim,
    /// Jobs run as local processes.
    Local,
    Slurm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub kind: ClusterKind,
    pub fleet: u32,
    pub sbatch: String,
    pub squeue: String,
    pub sacct: String,
    pub scancel: String,
    /// Extra `#SBATCH` lines.
    pub directives: Vec<String>,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            kind: ClusterKind::Local,
            fleet: 4,
            sbatch: "sbatch".into(),
            squeue: "squeue".into(),
            sacct: "sacct".into(),
            scancel: "scancel".into(),
            directives: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub bind: String,
    pub page_size: usize,
    /// Directory of the built dashboard, served at `/`.
    pub static_dir: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8470".into(),
            page_size: 100,
            static_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub campaign: CampaignSection,
    #[serde(default)]
    pub policy: Policy,
    #[serde(default)]
    pub dispatcher: DispatcherConfig,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub cluster: ClusterConfig,
    #[serde(default)]
    pub gateway: GatewayConfig,
    /// Run on a simulated clock; ticks cost no wall time.
    #[serde(default)]
    pub virtual_clock: bool,
    /// Commit adapter patches with git.
    #[serde(default)]
    pub git_checkpoints: bool,
}

impl CampaignConfig {
    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Reads a config file and makes the workspace path absolute.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        if cfg.campaign.workspace.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.campaign.workspace = base.join(&cfg.campaign.workspace);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let p = &self.policy;
        if self.campaign.id.trim().is_empty() {
            return Err(ConfigError::Invalid("campaign.id is empty".into()));
        }
        if !(0.0..=1.0).contains(&p.tau) {
            return Err(ConfigError::Invalid(format!("policy.tau {} outside [0, 1]", p.tau)));
        }
        if p.i_max == 0 || p.strategist_cadence == 0 || p.milestone_cadence == 0 || p.convergence_window == 0 {
            return Err(ConfigError::Invalid(
                "policy.i_max, cadences and convergence_window must be at least 1".into(),
            ));
        }
        if self.dispatcher.workers == 0 || self.cluster.fleet == 0 {
            return Err(ConfigError::Invalid("dispatcher.workers and cluster.fleet must be at least 1".into()));
        }
        Ok(())
    }

    pub fn brief(&self) -> CampaignBrief {
        CampaignBrief {
            domain: self.campaign.domain.clone(),
            objective: self.campaign.objective.clone(),
            dataset: self.campaign.dataset.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = CampaignConfig::parse(
            "[campaign]\nid = \"c\"\nworkspace = \"ws\"\ndomain = \"time_series\"\nbudget = 10\n",
        )
        .unwrap();
        assert_eq!(cfg.policy, Policy::default());
        assert_eq!(cfg.cluster.fleet, 4);
        assert!(matches!(cfg.backend, BackendConfig::Remote { .. }));
        cfg.validate().unwrap();
    }

    #[test]
    fn scripted_backend_and_overrides() {
        let cfg = CampaignConfig::parse(
            "virtual_clock = true\n[campaign]\nid = \"c\"\nworkspace = \"ws\"\ndomain = \"time_series\"\nbudget = 10\n[policy]\ntau = 0.5\n[backend]\nkind = \"scripted\"\nprofile = \"happy_path\"\n[cluster]\nkind = \"sim\"\n",
        )
        .unwrap();
        assert_eq!(cfg.policy.tau, 0.5);
        assert_eq!(cfg.policy.k_max, 2);
        assert_eq!(cfg.cluster.kind, ClusterKind::Sim);
        assert!(matches!(cfg.backend, BackendConfig::Scripted { ref profile, .. } if profile == "happy_path"));
    }

    #[test]
    fn rejects_bad_tau() {
        let mut cfg = CampaignConfig::parse(
            "[campaign]\nid = \"c\"\nworkspace = \"ws\"\ndomain = \"d\"\nbudget = 1\n",
        )
        .unwrap();
        cfg.policy.tau = 1.5;
        assert!(cfg.validate().is_err());
    }
}
