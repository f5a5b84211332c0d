use std::io::Read;
use std::os::unix::process::CommandExt;
use std::path::Path;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::files::confine;
use super::{str_arg, ToolErrorKind, ToolLimits, ToolResult};

/// Keeps the last `cap` bytes of a stream and counts the rest.
pub(crate) struct Tail {
    cap: usize,
    buf: Vec<u8>,
    total: u64,
}

impl Tail {
    pub(crate) fn new(cap: usize) -> Self {
        Self {
            cap,
            buf: Vec::new(),
            total: 0,
        }
    }

    pub(crate) fn push(&mut self, chunk: &[u8]) {
        self.total += chunk.len() as u64;
        self.buf.extend_from_slice(chunk);
        if self.buf.len() > self.cap.saturating_mul(2).max(8192) {
            let cut = self.buf.len() - self.cap;
            self.buf.drain(..cut);
        }
    }

    pub(crate) fn truncated(&self) -> bool {
        self.total > self.cap as u64
    }

    /// The kept tail, prefixed with a marker when bytes were dropped.
    pub(crate) fn finish(mut self) -> (String, bool) {
        if self.buf.len() > self.cap {
            let cut = self.buf.len() - self.cap;
            self.buf.drain(..cut);
        }
        let truncated = self.truncated();
        let body = String::from_utf8_lossy(&self.buf).into_owned();
        if truncated {
            let dropped = self.total - self.buf.len() as u64;
            (format!("[truncated {dropped} bytes]\n{body}"), true)
        } else {
            (body, false)
        }
    }
}

fn drain(mut r: impl Read + Send + 'static, cap: usize) -> thread::JoinHandle<Tail> {
    thread::spawn(move || {
        let mut tail = Tail::new(cap);
        let mut chunk = [0u8; 16 * 1024];
        loop {
            match r.read(&mut chunk) {
                Ok(0) | Err(_) => break,
                Ok(n) => tail.push(&chunk[..n]),
            }
        }
        tail
    })
}

pub(crate) fn exec(workspace: &Path, limits: &ToolLimits, args: &Value) -> ToolResult {
    if !limits.shell_enabled {
        return ToolResult::error(ToolErrorKind::ShellDisabled, "shell_exec is disabled for this campaign");
    }
    let cmd = str_arg(args, "cmd").unwrap_or_default();
    let timeout_s = args
        .get("timeout_s")
        .and_then(Value::as_u64)
        .unwrap_or(limits.shell_default_timeout_s);
    if timeout_s == 0 || timeout_s > limits.shell_max_timeout_s {
        return ToolResult::error(
            ToolErrorKind::InvalidArgument,
            format!("timeout_s must be in 1..={}", limits.shell_max_timeout_s),
        );
    }
    let cwd = match confine(workspace, str_arg(args, "cwd").unwrap_or(".")) {
        Ok(p) if p.is_dir() => p,
        Ok(p) => {
            return ToolResult::error(ToolErrorKind::NotFound, format!("{} is not a directory", p.display()));
        }
        Err(e) => return ToolResult::error(ToolErrorKind::PathEscape, e.to_string()),
    };
    let mut child = match Command::new("sh")
        .arg("-c")
        .arg(cmd)
        .current_dir(&cwd)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0)
        .spawn()
    {
        Ok(c) => c,
        Err(e) => return ToolResult::error(ToolErrorKind::Io, format!("spawn failed: {e}")),
    };
    let out = drain(child.stdout.take().expect("piped"), limits.output_cap);
    let err = drain(child.stderr.take().expect("piped"), limits.output_cap);
    let deadline = Instant::now() + Duration::from_secs(timeout_s);
    let status = loop {
        match child.try_wait() {
            Ok(Some(status)) => break Some(status),
            Ok(None) if Instant::now() >= deadline => {
                // SAFETY: the child leads its own process group.
                unsafe {
                    libc::kill(-(child.id() as libc::pid_t), libc::SIGKILL);
                }
                let _ = child.wait();
                break None;
            }
            Ok(None) => thread::sleep(Duration::from_millis(5)),
            Err(e) => return ToolResult::error(ToolErrorKind::Io, e.to_string()),
        }
    };
    let (stdout, out_trunc) = out.join().expect("reader thread").finish();
    let (stderr, err_trunc) = err.join().expect("reader thread").finish();
    let truncated = out_trunc || err_trunc;
    match status {
        Some(status) => ToolResult::record(json!({
            "stdout": stdout,
            "stderr": stderr,
            "exit_code": status.code().unwrap_or(-1),
            "truncated": truncated,
        })),
        None => ToolResult::error_with(
            ToolErrorKind::Timeout,
            format!("killed after {timeout_s}s"),
            json!({ "stdout": stdout, "stderr": stderr, "exit_code": null, "truncated": truncated }),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tools::Payload;

    fn run(ws: &Path, args: Value, limits: &ToolLimits) -> ToolResult {
        exec(ws, limits, &args)
    }

    fn field<'a>(r: &'a ToolResult, k: &str) -> &'a Value {
        match &r.payload {
            Payload::Record { value } => &value[k],
            _ => panic!("not a record"),
        }
    }

    #[test]
    fn echo_and_failure_as_data() {
        let ws = tempfile::tempdir().unwrap();
        let l = ToolLimits::default();
        let r = run(ws.path(), json!({"cmd": "echo hi"}), &l);
        assert!(r.ok);
        assert_eq!(field(&r, "stdout"), "hi\n");
        assert_eq!(field(&r, "exit_code"), 0);
        let r = run(ws.path(), json!({"cmd": "exit 3"}), &l);
        assert!(r.ok);
        assert_eq!(field(&r, "exit_code"), 3);
    }

    #[test]
    fn large_output_keeps_the_tail() {
        let ws = tempfile::tempdir().unwrap();
        let l = ToolLimits::default();
        // 10 MiB of 'a' followed by a recognisable tail.
        let r = run(
            ws.path(),
            json!({"cmd": "head -c 10485760 /dev/zero | tr '\\0' a; printf END"}),
            &l,
        );
        assert_eq!(field(&r, "truncated"), true);
        let out = field(&r, "stdout").as_str().unwrap();
        let body = out.split_once('\n').unwrap().1;
        assert_eq!(body.len(), 64 * 1024);
        assert!(body.ends_with("END"));
        let dropped = 10 * 1024 * 1024 + 3 - 64 * 1024;
        assert!(out.starts_with(&format!("[truncated {dropped} bytes]")));
    }

    #[test]
    fn timeout_kills_and_returns_partial_output() {
        let ws = tempfile::tempdir().unwrap();
        let l = ToolLimits::default();
        let started = Instant::now();
        let r = run(ws.path(), json!({"cmd": "echo early; sleep 30", "timeout_s": 1}), &l);
        assert!(started.elapsed() < Duration::from_secs(10));
        assert_eq!(r.error_kind(), Some(ToolErrorKind::Timeout));
        assert_eq!(field(&r, "stdout"), "early\n");
    }

    #[test]
    fn cwd_outside_workspace_is_rejected() {
        let ws = tempfile::tempdir().unwrap();
        let marker = ws.path().parent().unwrap().join("should-not-exist-campaign");
        let cmd = format!("touch {}", marker.display());
        let r = run(ws.path(), json!({"cmd": cmd, "cwd": ".."}), &ToolLimits::default());
        assert_eq!(r.error_kind(), Some(ToolErrorKind::PathEscape));
        assert!(!marker.exists());
    }

    #[test]
    fn disabled_shell() {
        let ws = tempfile::tempdir().unwrap();
        let l = ToolLimits {
            shell_enabled: false,
            ..ToolLimits::default()
        };
        let r = run(ws.path(), json!({"cmd": "echo hi"}), &l);
        assert_eq!(r.error_kind(), Some(ToolErrorKind::ShellDisabled));
    }
}
