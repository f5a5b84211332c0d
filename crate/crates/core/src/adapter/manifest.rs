use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AdapterError;
use crate::board::{Direction, MetricDef, MetricSpec};

/// How an experiment directory must be laid out for the dispatcher.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentStructure {
    /// Entry point the worker writes inside `experiments/<name>/`.
    pub run_script: String,
    /// Command the cluster runs from the experiment directory.
    pub run_command: String,
    /// Flag that turns a full run into a smoke run.
    pub smoke_flag: String,
    pub gpus_per_experiment: u32,
    pub time_limit_s: u64,
}

impl Default for ExperimentStructure {
    fn default() -> Self {
        Self {
            run_script: "run_experiment.py".into(),
            run_command: "python run_experiment.py".into(),
            smoke_flag: "--smoke".into(),
            gpus_per_experiment: 1,
            time_limit_s: 1200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub domain: String,
    pub metrics: Vec<MetricDef>,
    #[serde(default)]
    pub experiment_structure: ExperimentStructure,
    #[serde(default)]
    pub entry_points: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifestFormat {
    Yaml,
    Json,
}

impl ManifestFormat {
    pub fn file_name(self) -> &'static str {
        match self {
            ManifestFormat::Yaml => "manifest.yaml",
            ManifestFormat::Json => "manifest.json",
        }
    }
}

impl Manifest {
    pub fn parse(text: &str, format: ManifestFormat) -> Result<Self, AdapterError> {
        match format {
            ManifestFormat::Yaml => {
                serde_yaml::from_str(text).map_err(|e| AdapterError::InvalidManifest(e.to_string()))
            }
            ManifestFormat::Json => {
                serde_json::from_str(text).map_err(|e| AdapterError::InvalidManifest(e.to_string()))
            }
        }
    }

    pub fn render(&self, format: ManifestFormat) -> String {
        match format {
            ManifestFormat::Yaml => serde_yaml::to_string(self).expect("manifest serializes"),
            ManifestFormat::Json => {
                let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
                s.push('\n');
                s
            }
        }
    }

    pub fn primary(&self) -> Option<&MetricDef> {
        let mut it = self.metrics.iter().filter(|m| m.primary);
        match (it.next(), it.next()) {
            (Some(m), None) => Some(m),
            _ => None,
        }
    }

    pub fn metric_spec(&self) -> Result<MetricSpec, AdapterError> {
        let primaries = self.metrics.iter().filter(|m| m.primary).count();
        if self.metrics.is_empty() {
            return Err(AdapterError::InvalidManifest("no metrics defined".into()));
        }
        let primary = match primaries {
            1 => self.primary().expect("exactly one"),
            0 => return Err(AdapterError::InvalidManifest("no primary metric".into())),
            _ => return Err(AdapterError::InvalidManifest("more than one primary metric".into())),
        };
        Ok(MetricSpec {
            primary: primary.name.clone(),
            direction: primary.direction,
            metrics: self.metrics.clone(),
        })
    }
}

/// Minimal manifest used when none can be found; single `score` metric.
pub fn placeholder(domain: &str) -> Manifest {
    Manifest {
        domain: domain.to_string(),
        metrics: vec![MetricDef {
            name: "score".into(),
            direction: Direction::Max,
            primary: true,
        }],
        experiment_structure: ExperimentStructure::default(),
        entry_points: BTreeMap::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const YAML: &str = "\
domain: llm_speedrun
metrics:
  - name: val_bpb
    direction: min
    primary: true
  - name: tokens_per_s
    direction: max
experiment_structure:
  run_script: train.py
  run_command: python train.py
entry_points:
  phase2: harness/runner.py
";

    #[test]
    fn yaml_and_json_round_trip() {
        let m = Manifest::parse(YAML, ManifestFormat::Yaml).unwrap();
        assert_eq!(m.experiment_structure.run_script, "train.py");
        assert_eq!(m.experiment_structure.smoke_flag, "--smoke");
        let spec = m.metric_spec().unwrap();
        assert_eq!(spec.primary, "val_bpb");
        assert_eq!(spec.direction, Direction::Min);
        let json = m.render(ManifestFormat::Json);
        assert_eq!(Manifest::parse(&json, ManifestFormat::Json).unwrap(), m);
        let yaml = m.render(ManifestFormat::Yaml);
        assert_eq!(Manifest::parse(&yaml, ManifestFormat::Yaml).unwrap(), m);
    }

    #[test]
    fn bad_direction_is_rejected() {
        let text = YAML.replace("direction: min", "direction: down");
        assert!(Manifest::parse(&text, ManifestFormat::Yaml).is_err());
    }
}
