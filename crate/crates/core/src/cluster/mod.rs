//! Cluster backends: submit, poll and cancel jobs against a GPU fleet.
//!
//! [`Cluster`] owns the [`GpuPool`] and the job table; a [`JobBackend`] only
//! knows how to start, inspect and stop one job. Three backends exist: the
//! external scheduler via its CLI ([`slurm::SlurmBackend`]), local
//! subprocesses ([`local::LocalBackend`]) and a deterministic simulation on
//! the virtual clock ([`sim::SimBackend`]).

pub mod local;
mod pool;
pub mod sim;
pub mod slurm;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::board::ExperimentId;
use crate::clock::{SharedClock, Timestamp};

pub use pool::{AllocRequest, Allocation, GpuPool, JobPriority};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("job asks for {requested} GPUs but the fleet has {fleet}")]
    ExceedsFleet { requested: u32, fleet: u32 },
    #[error("invalid job spec: {0}")]
    InvalidSpec(String),
    #[error("submit failed: {0}")]
    SubmitFailed(String),
    #[error("unknown job handle `{0}`")]
    UnknownHandle(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Slurm,
    Local,
    Sim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Pending,
    Running,
    Completed,
    Failed,
    Cancelled,
    Timeout,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        !matches!(self, JobState::Pending | JobState::Running)
    }

    pub fn is_failure(self) -> bool {
        matches!(self, JobState::Failed | JobState::Timeout)
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            JobState::Pending => "pending",
            JobState::Running => "running",
            JobState::Completed => "completed",
            JobState::Failed => "failed",
            JobState::Cancelled => "cancelled",
            JobState::Timeout => "timeout",
        };
        f.write_str(s)
    }
}

/// Reference to a job. `id` is assigned at submit and never changes;
/// `external_id` is the backend's own id once the job has been launched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobHandle {
    pub backend: BackendKind,
    pub id: String,
    pub external_id: Option<String>,
    pub state: JobState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSpec {
    pub experiment: ExperimentId,
    /// Experiment name; used for script names and outcome lookup.
    pub name: String,
    pub command: String,
    pub workdir: PathBuf,
    pub gpus_requested: u32,
    pub time_limit_s: u64,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
    #[serde(default = "normal")]
    pub priority: JobPriority,
}

fn normal() -> JobPriority {
    JobPriority::Normal
}

impl JobSpec {
    pub fn validate(&self) -> Result<(), ClusterError> {
        if self.gpus_requested < 1 {
            return Err(ClusterError::InvalidSpec("gpus_requested must be >= 1".into()));
        }
        if self.time_limit_s == 0 {
            return Err(ClusterError::InvalidSpec("time_limit_s must be > 0".into()));
        }
        Ok(())
    }
}

/// Starts, inspects and stops individual jobs. GPU accounting lives in
/// [`Cluster`]; backends receive the GPU ids to expose to the job.
pub trait JobBackend: Send {
    fn kind(&self) -> BackendKind;

    /// Starts the job and returns the backend's id for it.
    fn launch(&mut self, spec: &JobSpec, gpus: &[u32], attempt: u32)
    -> Result<String, ClusterError>;

    /// Current state of a launched job, as the backend reports it.
    fn status(&mut self, external_id: &str) -> Result<JobState, ClusterError>;

    fn cancel(&mut self, external_id: &str) -> Result<(), ClusterError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterEventKind {
    Submitted,
    Launched,
    Finished,
    Cancelled,
}

/// One entry of the cluster's event log, with pool occupancy after the event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterEvent {
    pub at: Timestamp,
    pub job: String,
    pub experiment: ExperimentId,
    pub kind: ClusterEventKind,
    pub state: JobState,
    pub gpus: Vec<u32>,
    pub allocated: u32,
    pub free: u32,
}

struct JobEntry {
    spec: JobSpec,
    handle: JobHandle,
    attempt: u32,
    launched_at: Option<Timestamp>,
}

pub struct Cluster {
    backend: Box<dyn JobBackend>,
    pool: GpuPool,
    clock: SharedClock,
    jobs: BTreeMap<String, JobEntry>,
    attempts: BTreeMap<String, u32>,
    next_id: u64,
    log: Vec<ClusterEvent>,
}

impl Cluster {
    pub fn new(backend: Box<dyn JobBackend>, fleet: u32, clock: SharedClock) -> Self {
        Self {
            backend,
            pool: GpuPool::new(fleet),
            clock,
            jobs: BTreeMap::new(),
            attempts: BTreeMap::new(),
            next_id: 0,
            log: Vec::new(),
        }
    }

    pub fn kind(&self) -> BackendKind {
        self.backend.kind()
    }

    pub fn pool(&self) -> &GpuPool {
        &self.pool
    }

    pub fn log(&self) -> &[ClusterEvent] {
        &self.log
    }

    pub fn handle(&self, id: &str) -> Option<&JobHandle> {
        self.jobs.get(id).map(|j| &j.handle)
    }

    pub fn spec(&self, id: &str) -> Option<&JobSpec> {
        self.jobs.get(id).map(|j| &j.spec)
    }

    /// Submits a job. It starts immediately if GPUs are free, otherwise the
    /// handle stays `pending` until a release serves it.
    pub fn submit(&mut self, spec: JobSpec) -> Result<JobHandle, ClusterError> {
        spec.validate()?;
        if spec.gpus_requested > self.pool.fleet() {
            return Err(ClusterError::ExceedsFleet {
                requested: spec.gpus_requested,
                fleet: self.pool.fleet(),
            });
        }
        self.next_id += 1;
        let id = format!("job-{:04}", self.next_id);
        let attempt = {
            let n = self.attempts.entry(spec.name.clone()).or_insert(0);
            *n += 1;
            *n - 1
        };
        let handle = JobHandle {
            backend: self.backend.kind(),
            id: id.clone(),
            external_id: None,
            state: JobState::Pending,
        };
        let request = AllocRequest {
            key: id.clone(),
            gpus: spec.gpus_requested,
            priority: spec.priority,
            order: self.next_id,
        };
        self.jobs.insert(
            id.clone(),
            JobEntry {
                spec,
                handle,
                attempt,
                launched_at: None,
            },
        );
        self.record(&id, ClusterEventKind::Submitted, Vec::new());
        if let Allocation::Assigned(gpus) = self.pool.allocate(request)
            && let Err(e) = self.launch(&id, gpus) {
                self.jobs.remove(&id);
                self.pool.release(&id);
                return Err(e);
            }
        Ok(self.jobs[&id].handle.clone())
    }

    fn launch(&mut self, id: &str, gpus: Vec<u32>) -> Result<(), ClusterError> {
        let entry = self.jobs.get_mut(id).expect("job exists");
        let external = self
            .backend
            .launch(&entry.spec, &gpus, entry.attempt)
            .map_err(|e| match e {
                ClusterError::SubmitFailed(_) => e,
                other => ClusterError::SubmitFailed(other.to_string()),
            })?;
        entry.handle.external_id = Some(external);
        entry.handle.state = JobState::Running;
        entry.launched_at = Some(self.clock.now());
        self.record(id, ClusterEventKind::Launched, gpus);
        Ok(())
    }

    /// Launches whatever the pool just assigned. A launch failure marks that
    /// job failed and frees its GPUs for the next request.
    fn launch_served(&mut self, served: Vec<(String, Vec<u32>)>) {
        let mut queue: std::collections::VecDeque<_> = served.into();
        while let Some((id, gpus)) = queue.pop_front() {
            if let Err(e) = self.launch(&id, gpus) {
                log::warn!("launch of {id} failed: {e}");
                if let Some(entry) = self.jobs.get_mut(&id) {
                    entry.handle.state = JobState::Failed;
                }
                self.pool.free_held(&id);
                self.record(&id, ClusterEventKind::Finished, Vec::new());
                queue.extend(self.pool.serve());
            }
        }
    }

    /// Refreshes a job's state. Terminal jobs free their GPUs, which may
    /// launch waiting jobs.
    pub fn poll(&mut self, id: &str) -> Result<JobState, ClusterError> {
        let now = self.clock.now();
        let entry = self
            .jobs
            .get(id)
            .ok_or_else(|| ClusterError::UnknownHandle(id.to_string()))?;
        if entry.handle.state != JobState::Running {
            return Ok(entry.handle.state);
        }
        let external = entry.handle.external_id.clone().expect("running job has an id");
        let over_limit = entry
            .launched_at
            .is_some_and(|t| now.saturating_sub(t) > entry.spec.time_limit_s * 1000);
        let mut state = self.backend.status(&external)?;
        if !state.is_terminal() && over_limit {
            if let Err(e) = self.backend.cancel(&external) {
                log::warn!("failed to stop {id} after its time limit: {e}");
            }
            state = JobState::Timeout;
        }
        if state == JobState::Pending {
            // Backend-side queueing (external scheduler) while we hold the GPUs.
            return Ok(JobState::Running);
        }
        if state.is_terminal() {
            self.jobs.get_mut(id).expect("exists").handle.state = state;
            self.pool.free_held(id);
            self.record(id, ClusterEventKind::Finished, Vec::new());
            let served = self.pool.serve();
            self.launch_served(served);
        }
        Ok(state)
    }

    pub fn cancel(&mut self, id: &str) -> Result<JobState, ClusterError> {
        let entry = self
            .jobs
            .get_mut(id)
            .ok_or_else(|| ClusterError::UnknownHandle(id.to_string()))?;
        match entry.handle.state {
            JobState::Pending => {
                entry.handle.state = JobState::Cancelled;
                self.pool.cancel_waiting(id);
                self.record(id, ClusterEventKind::Cancelled, Vec::new());
            }
            JobState::Running => {
                let external = entry.handle.external_id.clone().expect("running job has an id");
                entry.handle.state = JobState::Cancelled;
                if let Err(e) = self.backend.cancel(&external) {
                    log::warn!("cancel of {id} failed at the backend: {e}");
                }
                self.pool.free_held(id);
                self.record(id, ClusterEventKind::Cancelled, Vec::new());
                let served = self.pool.serve();
                self.launch_served(served);
            }
            _ => {}
        }
        Ok(self.jobs[id].handle.state)
    }

    fn record(&mut self, id: &str, kind: ClusterEventKind, gpus: Vec<u32>) {
        let entry = &self.jobs[id];
        self.log.push(ClusterEvent {
            at: self.clock.now(),
            job: id.to_string(),
            experiment: entry.spec.experiment.clone(),
            kind,
            state: entry.handle.state,
            gpus,
            allocated: self.pool.allocated_count(),
            free: self.pool.free_count(),
        });
    }
}

#[cfg(test)]
mod tests {
    use super::sim::SimBackend;
    use super::*;
    use crate::clock::VirtualClock;
    use crate::fixtures::{JobOutcome, OutcomeRule, OutcomeTable};
    use std::sync::Arc;

    fn table(duration_s: u64, exit_code: i32) -> OutcomeTable {
        OutcomeTable {
            rules: vec![OutcomeRule {
                pattern: "*".into(),
                attempts: vec![JobOutcome {
                    duration_s,
                    exit_code,
                    metrics: Default::default(),
                    scope: crate::board::MetricScope::Full,
                    log: "boom".into(),
                }],
            }],
        }
    }

    fn spec(name: &str, dir: &std::path::Path, gpus: u32) -> JobSpec {
        JobSpec {
            experiment: ExperimentId(name.into()),
            name: name.into(),
            command: "python run_experiment.py".into(),
            workdir: dir.join(name),
            gpus_requested: gpus,
            time_limit_s: 1200,
            env: BTreeMap::new(),
            priority: JobPriority::Normal,
        }
    }

    fn sim_cluster(duration_s: u64, exit_code: i32) -> (Cluster, VirtualClock) {
        let clock = VirtualClock::new(0);
        let shared: SharedClock = Arc::new(clock.clone());
        let backend = SimBackend::new(table(duration_s, exit_code), shared.clone());
        (Cluster::new(Box::new(backend), 4, shared), clock)
    }

    #[test]
    fn one_gpu_request_runs_on_four_gpu_fleet() {
        let dir = tempfile::tempdir().unwrap();
        let (mut c, _) = sim_cluster(100, 0);
        let h = c.submit(spec("a", dir.path(), 1)).unwrap();
        assert_eq!(h.state, JobState::Running);
        assert_eq!(c.pool().assignment(&h.id), Some(&[0][..]));
    }

    #[test]
    fn request_larger_than_fleet_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (mut c, _) = sim_cluster(100, 0);
        assert!(matches!(
            c.submit(spec("a", dir.path(), 5)),
            Err(ClusterError::ExceedsFleet { requested: 5, fleet: 4 })
        ));
    }

    #[test]
    fn sim_job_completes_after_its_duration_and_frees_gpus() {
        let dir = tempfile::tempdir().unwrap();
        let (mut c, clock) = sim_cluster(100, 0);
        let h = c.submit(spec("a", dir.path(), 1)).unwrap();
        clock.advance(99_000);
        assert_eq!(c.poll(&h.id).unwrap(), JobState::Running);
        clock.advance(1_000);
        assert_eq!(c.poll(&h.id).unwrap(), JobState::Completed);
        assert_eq!(c.pool().free_count(), 4);
    }

    #[test]
    fn job_past_its_limit_times_out() {
        let dir = tempfile::tempdir().unwrap();
        let (mut c, clock) = sim_cluster(5_000, 0);
        let h = c.submit(spec("a", dir.path(), 1)).unwrap();
        clock.advance(1_201_000);
        assert_eq!(c.poll(&h.id).unwrap(), JobState::Timeout);
        assert_eq!(c.pool().free_count(), 4);
    }

    #[test]
    fn unknown_handle() {
        let (mut c, _) = sim_cluster(1, 0);
        assert!(matches!(c.poll("job-9999"), Err(ClusterError::UnknownHandle(_))));
    }

    #[test]
    fn pending_job_starts_when_gpus_free_up() {
        let dir = tempfile::tempdir().unwrap();
        let (mut c, clock) = sim_cluster(10, 0);
        let handles: Vec<_> = (0..5)
            .map(|i| c.submit(spec(&format!("e{i}"), dir.path(), 1)).unwrap())
            .collect();
        assert_eq!(handles[4].state, JobState::Pending);
        clock.advance(10_000);
        c.poll(&handles[0].id).unwrap();
        assert_eq!(c.handle(&handles[4].id).unwrap().state, JobState::Running);
        assert!(c.log().iter().all(|e| e.allocated + e.free == 4));
    }

    #[test]
    fn cancelling_pending_and_running_jobs() {
        let dir = tempfile::tempdir().unwrap();
        let (mut c, _) = sim_cluster(10, 0);
        let hs: Vec<_> = (0..5)
            .map(|i| c.submit(spec(&format!("e{i}"), dir.path(), 1)).unwrap())
            .collect();
        assert_eq!(c.cancel(&hs[4].id).unwrap(), JobState::Cancelled);
        assert_eq!(c.cancel(&hs[0].id).unwrap(), JobState::Cancelled);
        assert_eq!(c.pool().free_count(), 1);
        assert!(c.pool().is_consistent());
    }
}
