//! Runs jobs as local subprocesses, one process group per job.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::os::unix::process::CommandExt;
use std::process::{Child, Command, Stdio};

use super::{BackendKind, ClusterError, JobBackend, JobSpec, JobState};

pub struct LocalBackend {
    children: BTreeMap<String, (Child, Option<JobState>)>,
}

impl Default for LocalBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl LocalBackend {
    pub fn new() -> Self {
        Self {
            children: BTreeMap::new(),
        }
    }
}

fn kill_group(child: &Child) {
    let pid = child.id() as libc::pid_t;
    // SAFETY: signalling a process group we created; failure only means it already exited.
    unsafe {
        libc::kill(-pid, libc::SIGKILL);
    }
}

impl JobBackend for LocalBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Local
    }

    fn launch(&mut self, spec: &JobSpec, gpus: &[u32], attempt: u32) -> Result<String, ClusterError> {
        let logs = spec.workdir.join("logs");
        fs::create_dir_all(&logs)?;
        let log = File::create(logs.join(format!("attempt_{attempt}.log")))?;
        let devices = gpus.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
        let child = Command::new("sh")
            .arg("-c")
            .arg(&spec.command)
            .current_dir(&spec.workdir)
            .envs(&spec.env)
            .env("CUDA_VISIBLE_DEVICES", devices)
            .stdin(Stdio::null())
            .stdout(log.try_clone()?)
            .stderr(log)
            .process_group(0)
            .spawn()
            .map_err(|e| ClusterError::SubmitFailed(format!("spawn `{}`: {e}", spec.command)))?;
        let id = child.id().to_string();
        self.children.insert(id.clone(), (child, None));
        Ok(id)
    }

    fn status(&mut self, external_id: &str) -> Result<JobState, ClusterError> {
        let (child, done) = self
            .children
            .get_mut(external_id)
            .ok_or_else(|| ClusterError::UnknownHandle(external_id.to_string()))?;
        if let Some(state) = done {
            return Ok(*state);
        }
        match child.try_wait()? {
            None => Ok(JobState::Running),
            Some(status) => {
                let state = if status.success() {
                    JobState::Completed
                } else {
                    JobState::Failed
                };
                *done = Some(state);
                Ok(state)
            }
        }
    }

    fn cancel(&mut self, external_id: &str) -> Result<(), ClusterError> {
        if let Some((child, done)) = self.children.get_mut(external_id)
            && done.is_none() {
                kill_group(child);
                let _ = child.wait();
                *done = Some(JobState::Cancelled);
            }
        Ok(())
    }
}

impl Drop for LocalBackend {
    fn drop(&mut self) {
        for (child, done) in self.children.values_mut() {
            if done.is_none() {
                kill_group(child);
                let _ = child.wait();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::board::ExperimentId;
    use crate::cluster::JobPriority;
    use std::time::{Duration, Instant};

    fn spec(dir: &std::path::Path, command: &str) -> JobSpec {
        JobSpec {
            experiment: ExperimentId("exp-0001".into()),
            name: "local".into(),
            command: command.into(),
            workdir: dir.to_path_buf(),
            gpus_requested: 1,
            time_limit_s: 60,
            env: [("LR".to_string(), "0.1".to_string())].into(),
            priority: JobPriority::Normal,
        }
    }

    fn wait(b: &mut LocalBackend, id: &str) -> JobState {
        let start = Instant::now();
        loop {
            let s = b.status(id).unwrap();
            if s.is_terminal() || start.elapsed() > Duration::from_secs(10) {
                return s;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
    }

    #[test]
    fn exit_codes_map_to_states() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = LocalBackend::new();
        let ok = b.launch(&spec(dir.path(), "echo $LR $CUDA_VISIBLE_DEVICES"), &[2], 0).unwrap();
        assert_eq!(wait(&mut b, &ok), JobState::Completed);
        let log = fs::read_to_string(dir.path().join("logs/attempt_0.log")).unwrap();
        assert_eq!(log, "0.1 2\n");
        let bad = b.launch(&spec(dir.path(), "exit 3"), &[0], 1).unwrap();
        assert_eq!(wait(&mut b, &bad), JobState::Failed);
    }

    #[test]
    fn cancel_kills_the_process_group() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = LocalBackend::new();
        let id = b.launch(&spec(dir.path(), "sleep 30 & sleep 30"), &[0], 0).unwrap();
        b.cancel(&id).unwrap();
        assert_eq!(b.status(&id).unwrap(), JobState::Cancelled);
    }
}
