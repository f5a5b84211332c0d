//! Deterministic simulated backend driven by an [`OutcomeTable`] and the
//! shared (usually virtual) clock.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;

use serde_json::json;

use super::{BackendKind, ClusterError, JobBackend, JobSpec, JobState};
use crate::clock::{SharedClock, Timestamp};
use crate::fixtures::{JobOutcome, OutcomeTable};

struct SimJob {
    workdir: PathBuf,
    attempt: u32,
    started: Timestamp,
    limit_ms: u64,
    outcome: JobOutcome,
    state: JobState,
}

pub struct SimBackend {
    table: OutcomeTable,
    clock: SharedClock,
    jobs: BTreeMap<String, SimJob>,
    next: u64,
}

impl SimBackend {
    pub fn new(table: OutcomeTable, clock: SharedClock) -> Self {
        Self {
            table,
            clock,
            jobs: BTreeMap::new(),
            next: 0,
        }
    }

    /// Earliest virtual time at which some running job changes state.
    pub fn next_event(&self) -> Option<Timestamp> {
        self.jobs
            .values()
            .filter(|j| !j.state.is_terminal())
            .map(|j| j.started + (j.outcome.duration_s * 1000).min(j.limit_ms))
            .min()
    }
}

fn write_outputs(job: &SimJob) -> std::io::Result<()> {
    let logs = job.workdir.join("logs");
    fs::create_dir_all(&logs)?;
    fs::write(logs.join(format!("attempt_{}.log", job.attempt)), &job.outcome.log)?;
    if job.state == JobState::Completed || !job.outcome.metrics.is_empty() {
        let results = job.workdir.join("results");
        fs::create_dir_all(&results)?;
        let doc = json!({ "metrics": job.outcome.metrics, "scope": job.outcome.scope });
        fs::write(
            results.join("metrics.json"),
            serde_json::to_string_pretty(&doc).expect("metrics serialize"),
        )?;
    }
    Ok(())
}

impl JobBackend for SimBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Sim
    }

    fn launch(&mut self, spec: &JobSpec, _gpus: &[u32], attempt: u32) -> Result<String, ClusterError> {
        let outcome = self
            .table
            .lookup(&spec.name, attempt)
            .cloned()
            .ok_or_else(|| ClusterError::SubmitFailed(format!("no outcome scripted for `{}`", spec.name)))?;
        self.next += 1;
        let id = format!("sim-{}", self.next);
        self.jobs.insert(
            id.clone(),
            SimJob {
                workdir: spec.workdir.clone(),
                attempt,
                started: self.clock.now(),
                limit_ms: spec.time_limit_s * 1000,
                outcome,
                state: JobState::Running,
            },
        );
        Ok(id)
    }

    fn status(&mut self, external_id: &str) -> Result<JobState, ClusterError> {
        let now = self.clock.now();
        let job = self
            .jobs
            .get_mut(external_id)
            .ok_or_else(|| ClusterError::UnknownHandle(external_id.to_string()))?;
        if job.state.is_terminal() {
            return Ok(job.state);
        }
        let elapsed = now.saturating_sub(job.started);
        let duration = job.outcome.duration_s * 1000;
        if duration > job.limit_ms && elapsed >= job.limit_ms {
            job.state = JobState::Timeout;
        } else if elapsed >= duration {
            job.state = if job.outcome.exit_code == 0 {
                JobState::Completed
            } else {
                JobState::Failed
            };
        } else {
            return Ok(JobState::Running);
        }
        write_outputs(job)?;
        Ok(job.state)
    }

    fn cancel(&mut self, external_id: &str) -> Result<(), ClusterError> {
        if let Some(job) = self.jobs.get_mut(external_id)
            && !job.state.is_terminal() {
                job.state = JobState::Cancelled;
            }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::board::{ExperimentId, MetricScope};
    use crate::clock::VirtualClock;
    use crate::cluster::JobPriority;
    use crate::fixtures::{FixtureValue, OutcomeRule};
    use std::sync::Arc;

    #[test]
    fn completion_writes_metrics_and_log() {
        let dir = tempfile::tempdir().unwrap();
        let clock = VirtualClock::new(0);
        let table = OutcomeTable {
            rules: vec![OutcomeRule {
                pattern: "*".into(),
                attempts: vec![JobOutcome {
                    duration_s: 100,
                    exit_code: 0,
                    metrics: [("val_bpb".to_string(), FixtureValue(0.75))].into(),
                    scope: MetricScope::Full,
                    log: "step 100 ok\n".into(),
                }],
            }],
        };
        let mut sim = SimBackend::new(table, Arc::new(clock.clone()));
        let spec = JobSpec {
            experiment: ExperimentId("exp-0001".into()),
            name: "baseline".into(),
            command: "python run_experiment.py".into(),
            workdir: dir.path().join("experiments/baseline"),
            gpus_requested: 1,
            time_limit_s: 1200,
            env: BTreeMap::new(),
            priority: JobPriority::Normal,
        };
        let id = sim.launch(&spec, &[0], 0).unwrap();
        assert_eq!(sim.next_event(), Some(100_000));
        clock.advance(100_000);
        assert_eq!(sim.status(&id).unwrap(), JobState::Completed);
        let text = fs::read_to_string(spec.workdir.join("results/metrics.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["metrics"]["val_bpb"], 0.75);
        assert_eq!(v["scope"], "full");
        assert!(spec.workdir.join("logs/attempt_0.log").exists());
    }
}
