//! External scheduler backend driven through its command-line tools.
//!
//! Each launch writes `slurm/<experiment>.sbatch` and submits it with
//! `sbatch --parsable`. Status comes from `squeue`, falling back to `sacct`
//! once the job has left the queue.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use super::{BackendKind, ClusterError, JobBackend, JobSpec, JobState};

/// Scheduler command names and extra submit flags.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlurmCommands {
    pub sbatch: String,
    pub squeue: String,
    pub sacct: String,
    pub scancel: String,
    /// Extra `#SBATCH` lines, e.g. `--partition=gpu`.
    pub directives: Vec<String>,
}

impl Default for SlurmCommands {
    fn default() -> Self {
        Self {
            sbatch: "sbatch".into(),
            squeue: "squeue".into(),
            sacct: "sacct".into(),
            scancel: "scancel".into(),
            directives: Vec::new(),
        }
    }
}

pub struct SlurmBackend {
    script_dir: PathBuf,
    commands: SlurmCommands,
}

impl SlurmBackend {
    /// `script_dir` is normally `<workspace>/slurm`.
    pub fn new(script_dir: impl Into<PathBuf>, commands: SlurmCommands) -> Self {
        Self {
            script_dir: script_dir.into(),
            commands,
        }
    }

    pub fn script_path(&self, spec: &JobSpec) -> PathBuf {
        self.script_dir.join(format!("{}.sbatch", spec.name))
    }
}

fn format_limit(seconds: u64) -> String {
    format!("{:02}:{:02}:{:02}", seconds / 3600, (seconds / 60) % 60, seconds % 60)
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

/// The job wrapper script. Layout: shebang, `#SBATCH` directives, env
/// exports, `cd` into the experiment directory, then the entry command.
pub fn render_script(spec: &JobSpec, attempt: u32, directives: &[String]) -> String {
    let log = spec.workdir.join("logs").join(format!("attempt_{attempt}.log"));
    let mut out = String::from("#!/bin/bash\n");
    out.push_str(&format!("#SBATCH --job-name={}\n", spec.name));
    out.push_str(&format!("#SBATCH --gres=gpu:{}\n", spec.gpus_requested));
    out.push_str(&format!("#SBATCH --time={}\n", format_limit(spec.time_limit_s)));
    out.push_str(&format!("#SBATCH --output={}\n", log.display()));
    for d in directives {
        out.push_str(&format!("#SBATCH {d}\n"));
    }
    out.push('\n');
    for (k, v) in &spec.env {
        out.push_str(&format!("export {k}={}\n", shell_quote(v)));
    }
    out.push_str(&format!("cd {}\n", shell_quote(&spec.workdir.display().to_string())));
    out.push_str(&spec.command);
    out.push('\n');
    out
}

fn run(program: &str, args: &[&str]) -> Result<(bool, String, String), ClusterError> {
    let out = Command::new(program)
        .args(args)
        .output()
        .map_err(|e| ClusterError::Backend(format!("{program}: {e}")))?;
    Ok((
        out.status.success(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    ))
}

/// Maps a scheduler state word (`RUNNING`, `OUT_OF_MEMORY`, `CANCELLED by 0`…).
pub fn parse_state(word: &str) -> Option<JobState> {
    let word = word.split_whitespace().next()?.trim_end_matches('+');
    Some(match word {
        "PENDING" | "CONFIGURING" | "REQUEUED" | "SUSPENDED" => JobState::Pending,
        "RUNNING" | "COMPLETING" => JobState::Running,
        "COMPLETED" => JobState::Completed,
        "CANCELLED" | "PREEMPTED" => JobState::Cancelled,
        "TIMEOUT" | "DEADLINE" => JobState::Timeout,
        "FAILED" | "NODE_FAIL" | "OUT_OF_MEMORY" | "BOOT_FAIL" => JobState::Failed,
        _ => return None,
    })
}

impl JobBackend for SlurmBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Slurm
    }

    fn launch(&mut self, spec: &JobSpec, _gpus: &[u32], attempt: u32) -> Result<String, ClusterError> {
        fs::create_dir_all(&self.script_dir)?;
        fs::create_dir_all(spec.workdir.join("logs"))?;
        let path = self.script_path(spec);
        fs::write(&path, render_script(spec, attempt, &self.commands.directives))?;
        let path_str = path_arg(&path);
        let (ok, stdout, stderr) = run(&self.commands.sbatch, &["--parsable", &path_str])
            .map_err(|e| ClusterError::SubmitFailed(e.to_string()))?;
        if !ok {
            return Err(ClusterError::SubmitFailed(stderr.trim().to_string()));
        }
        // `--parsable` prints `jobid` or `jobid;cluster`.
        let id = stdout.trim().split(';').next().unwrap_or("").to_string();
        if id.is_empty() {
            return Err(ClusterError::SubmitFailed("scheduler returned no job id".into()));
        }
        Ok(id)
    }

    fn status(&mut self, external_id: &str) -> Result<JobState, ClusterError> {
        let (ok, stdout, _) = run(&self.commands.squeue, &["-h", "-j", external_id, "-o", "%T"])?;
        if ok
            && let Some(state) = stdout.lines().find_map(parse_state) {
                return Ok(state);
            }
        let (_, stdout, stderr) = run(
            &self.commands.sacct,
            &["-n", "-X", "-P", "-j", external_id, "-o", "State"],
        )?;
        stdout.lines().find_map(parse_state).map_or_else(
            || {
                Err(ClusterError::Backend(format!(
                    "no state for job {external_id}: {}",
                    stderr.trim()
                )))
            },
            Ok,
        )
    }

    fn cancel(&mut self, external_id: &str) -> Result<(), ClusterError> {
        let (ok, _, stderr) = run(&self.commands.scancel, &[external_id])?;
        if ok {
            Ok(())
        } else {
            Err(ClusterError::Backend(stderr.trim().to_string()))
        }
    }
}

fn path_arg(path: &Path) -> String {
    path.display().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::board::ExperimentId;
    use crate::cluster::JobPriority;
    use std::os::unix::fs::PermissionsExt;

    fn fake(dir: &Path, name: &str, body: &str) -> String {
        let p = dir.join(name);
        fs::write(&p, format!("#!/bin/sh\n{body}\n")).unwrap();
        fs::set_permissions(&p, fs::Permissions::from_mode(0o755)).unwrap();
        p.display().to_string()
    }

    fn spec(dir: &Path) -> JobSpec {
        JobSpec {
            experiment: ExperimentId("exp-0003".into()),
            name: "wider_mlp".into(),
            command: "python run_experiment.py --full".into(),
            workdir: dir.join("experiments/wider_mlp"),
            gpus_requested: 1,
            time_limit_s: 1200,
            env: [("SEED".to_string(), "7".to_string())].into(),
            priority: JobPriority::Normal,
        }
    }

    #[test]
    fn script_layout() {
        let dir = tempfile::tempdir().unwrap();
        let text = render_script(&spec(dir.path()), 1, &["--partition=gpu".into()]);
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "#!/bin/bash");
        assert!(lines.contains(&"#SBATCH --time=00:20:00"));
        assert!(lines.contains(&"#SBATCH --gres=gpu:1"));
        assert!(lines.contains(&"#SBATCH --partition=gpu"));
        assert!(lines.contains(&"export SEED='7'"));
        assert_eq!(*lines.last().unwrap(), "python run_experiment.py --full");
    }

    #[test]
    fn submit_poll_cancel_through_fake_cli() {
        let dir = tempfile::tempdir().unwrap();
        let bin = dir.path().join("bin");
        fs::create_dir_all(&bin).unwrap();
        let commands = SlurmCommands {
            sbatch: fake(&bin, "sbatch", "echo '4242;main'"),
            squeue: fake(&bin, "squeue", "true"),
            sacct: fake(&bin, "sacct", "echo 'OUT_OF_MEMORY'"),
            scancel: fake(&bin, "scancel", "exit 0"),
            directives: vec![],
        };
        let mut b = SlurmBackend::new(dir.path().join("slurm"), commands);
        let s = spec(dir.path());
        let id = b.launch(&s, &[0], 0).unwrap();
        assert_eq!(id, "4242");
        assert!(dir.path().join("slurm/wider_mlp.sbatch").exists());
        assert_eq!(b.status(&id).unwrap(), JobState::Failed);
        b.cancel(&id).unwrap();
    }

    #[test]
    fn failing_sbatch_is_submit_failed() {
        let dir = tempfile::tempdir().unwrap();
        let commands = SlurmCommands {
            sbatch: fake(dir.path(), "sbatch", "echo 'invalid partition' >&2; exit 1"),
            ..SlurmCommands::default()
        };
        let mut b = SlurmBackend::new(dir.path().join("slurm"), commands);
        match b.launch(&spec(dir.path()), &[0], 0) {
            Err(ClusterError::SubmitFailed(msg)) => assert_eq!(msg, "invalid partition"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn state_words() {
        assert_eq!(parse_state("RUNNING"), Some(JobState::Running));
        assert_eq!(parse_state("CANCELLED by 1000"), Some(JobState::Cancelled));
        assert_eq!(parse_state("TIMEOUT"), Some(JobState::Timeout));
        assert_eq!(parse_state(""), None);
    }
}
