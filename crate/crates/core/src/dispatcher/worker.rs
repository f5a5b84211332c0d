//! Worker task contexts and what the dispatcher accepts from a finished session.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::adapter::{ContextDoc, ExperimentStructure};
use crate::board::{finite::parse_non_finite, Experiment, MetricScope, TaskKind};

pub const EXPERIMENTS_DIR: &str = "experiments";
pub const SMOKE_METRICS: &str = "results/smoke_metrics.json";
pub const METRICS: &str = "results/metrics.json";
pub const DEBRIEF: &str = "debrief.md";

/// `experiments/<name>` relative to the workspace.
pub fn experiment_dir(name: &str) -> PathBuf {
    Path::new(EXPERIMENTS_DIR).join(name)
}

/// What a worker said it reached, from its last `STATUS:` line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkerStatus {
    Implemented,
    Checked,
    Analyzed,
    Other,
}

pub fn parse_status(report: &str) -> Option<WorkerStatus> {
    report.lines().rev().find_map(|l| {
        let t = l.trim();
        let rest = t.get(..7).filter(|h| h.eq_ignore_ascii_case("STATUS:")).map(|_| t[7..].trim())?;
        Some(match rest.to_ascii_lowercase().as_str() {
            "implemented" => WorkerStatus::Implemented,
            "checked" => WorkerStatus::Checked,
            "analyzed" => WorkerStatus::Analyzed,
            _ => WorkerStatus::Other,
        })
    })
}

/// Metric values from a results file, either `{"metrics": {..}, "scope": ..}`
/// or a flat name → value object. Non-finite values may be strings.
pub fn read_metrics_file(path: &Path) -> Result<(BTreeMap<String, f64>, Option<MetricScope>), String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    let (map, scope) = match doc.get("metrics") {
        Some(Value::Object(m)) => {
            let scope = doc
                .get("scope")
                .and_then(|s| serde_json::from_value::<MetricScope>(s.clone()).ok());
            (m.clone(), scope)
        }
        _ => match doc {
            Value::Object(m) => (m, None),
            _ => return Err(format!("{}: expected an object", path.display())),
        },
    };
    let mut out = BTreeMap::new();
    for (k, v) in map {
        let value = match &v {
            Value::Number(n) => n.as_f64(),
            Value::String(s) => parse_non_finite(s).or_else(|| s.parse().ok()),
            Value::Null => Some(f64::NAN),
            _ => None,
        };
        if let Some(x) = value {
            out.insert(k, x);
        }
    }
    Ok((out, scope))
}

fn tail(path: &Path, bytes: usize) -> Option<String> {
    let b = fs::read(path).ok()?;
    let start = b.len().saturating_sub(bytes);
    Some(String::from_utf8_lossy(&b[start..]).into_owned())
}

/// Latest job log of an experiment, `logs/attempt_N.log` with the highest N.
pub fn latest_log(workspace: &Path, name: &str) -> Option<PathBuf> {
    let dir = workspace.join(experiment_dir(name)).join("logs");
    fs::read_dir(dir)
        .ok()?
        .filter_map(Result::ok)
        .filter_map(|e| {
            let p = e.path();
            let n: u32 = p
                .file_name()?
                .to_str()?
                .strip_prefix("attempt_")?
                .strip_suffix(".log")?
                .parse()
                .ok()?;
            Some((n, p))
        })
        .max_by_key(|(n, _)| *n)
        .map(|(_, p)| p)
}

/// Task document for a worker: `key: value` lines, then free text.
pub fn task_doc(task: TaskKind, exp: &Experiment, structure: &ExperimentStructure, workspace: &Path) -> Vec<ContextDoc> {
    let dir = experiment_dir(&exp.name);
    let dir_s = dir.display().to_string();
    let mut body = format!(
        "task: {}\nexperiment: {}\nexperiment_id: {}\ndir: {dir_s}\nrun_script: {}\nrun_command: {}\nsmoke_flag: {}\nharness: harness/\nfix_attempts: {}\n",
        task.as_str(),
        exp.name,
        exp.id,
        structure.run_script,
        structure.run_command,
        structure.smoke_flag,
        exp.fix_attempts,
    );
    let mut docs = Vec::new();
    match task {
        TaskKind::Implement => {
            let _ = write!(
                body,
                "\nImplement the experiment below in `{dir_s}/{}`. Run it with `{}` and write `{dir_s}/{SMOKE_METRICS}`.\n",
                structure.run_script, structure.smoke_flag
            );
        }
        TaskKind::Analyze => {
            let _ = write!(
                body,
                "results: {dir_s}/{METRICS}\nlogs: {dir_s}/logs\ndebrief: {dir_s}/{DEBRIEF}\n\nThe job finished. Read the results and logs and write the debrief.\n"
            );
        }
        TaskKind::Fix => {
            let log = latest_log(workspace, &exp.name);
            if let Some(p) = &log {
                let rel = p.strip_prefix(workspace).unwrap_or(p);
                let _ = writeln!(body, "failure_log: {}", rel.display());
            }
            let _ = write!(
                body,
                "\nThe last run failed. Read the log, patch the experiment and rerun the smoke test.\n"
            );
            let excerpt = log
                .and_then(|p| tail(&p, 4096))
                .unwrap_or_else(|| "(no job log: the previous worker session did not finish its task)".into());
            docs.push(ContextDoc::new(
                format!("failure:{}", exp.id),
                "Failure log",
                excerpt,
            ));
        }
    }
    let _ = write!(body, "\nhypothesis: {}\n", exp.hypothesis);
    docs.insert(0, ContextDoc::new(format!("task:{}:{}", task.as_str(), exp.id), "Task", body));
    docs
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_status_line_wins() {
        assert_eq!(parse_status("STATUS: implemented\nretried\nstatus: Checked"), Some(WorkerStatus::Checked));
        assert_eq!(parse_status("no marker"), None);
        assert_eq!(parse_status("STATUS: confused"), Some(WorkerStatus::Other));
    }

    #[test]
    fn metrics_file_shapes() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("m.json");
        fs::write(&p, r#"{"metrics": {"mase": 0.9, "smape": "NaN"}, "scope": "smoke"}"#).unwrap();
        let (m, scope) = read_metrics_file(&p).unwrap();
        assert_eq!(m["mase"], 0.9);
        assert!(m["smape"].is_nan());
        assert_eq!(scope, Some(MetricScope::Smoke));
        fs::write(&p, r#"{"mase": 1.5}"#).unwrap();
        let (m, scope) = read_metrics_file(&p).unwrap();
        assert_eq!((m["mase"], scope), (1.5, None));
        fs::write(&p, "[1]").unwrap();
        assert!(read_metrics_file(&p).is_err());
    }

    #[test]
    fn latest_log_by_attempt_number() {
        let d = tempfile::tempdir().unwrap();
        let logs = d.path().join("experiments/a/logs");
        fs::create_dir_all(&logs).unwrap();
        for n in [0, 2, 10] {
            fs::write(logs.join(format!("attempt_{n}.log")), "x").unwrap();
        }
        assert!(latest_log(d.path(), "a").unwrap().ends_with("attempt_10.log"));
    }
}
