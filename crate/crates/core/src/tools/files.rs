use std::fs;
use std::io::{Read, Seek, SeekFrom};
use std::path::{Component, Path, PathBuf};

use regex::Regex;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;
use walkdir::WalkDir;

use super::{str_arg, Payload, ToolErrorKind, ToolLimits, ToolResult};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("path `{0}` resolves outside the workspace")]
pub struct PathEscape(pub String);

fn normalize(path: &Path) -> Option<PathBuf> {
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            Component::ParentDir => {
                if !out.pop() {
                    return None;
                }
            }
            Component::CurDir => {}
            other => out.push(other.as_os_str()),
        }
    }
    Some(out)
}

/// Resolves `path` (relative to `workspace`, or absolute) and rejects it if
/// it lands outside the workspace, following symlinks of existing parts.
pub fn confine(workspace: &Path, path: &str) -> Result<PathBuf, PathEscape> {
    let escape = || PathEscape(path.to_string());
    let root = workspace.canonicalize().map_err(|_| escape())?;
    let joined = if Path::new(path).is_absolute() {
        PathBuf::from(path)
    } else {
        root.join(path)
    };
    let lexical = normalize(&joined).ok_or_else(escape)?;
    // Canonicalize the deepest existing ancestor so symlinks cannot escape.
    let mut existing = lexical.as_path();
    let mut rest = Vec::new();
    while !existing.exists() {
        rest.push(existing.file_name().ok_or_else(escape)?.to_owned());
        existing = existing.parent().ok_or_else(escape)?;
    }
    let mut resolved = existing.canonicalize().map_err(|_| escape())?;
    for part in rest.into_iter().rev() {
        resolved.push(part);
    }
    if resolved.starts_with(&root) {
        Ok(resolved)
    } else {
        Err(escape())
    }
}

fn rel(workspace: &Path, p: &Path) -> String {
    let root = workspace.canonicalize().unwrap_or_else(|_| workspace.to_path_buf());
    p.strip_prefix(&root).unwrap_or(p).display().to_string()
}

fn resolve(workspace: &Path, args: &Value) -> Result<PathBuf, ToolResult> {
    let path = str_arg(args, "path").unwrap_or_default();
    let p = confine(workspace, path).map_err(|e| ToolResult::error(ToolErrorKind::PathEscape, e.to_string()))?;
    if !p.exists() {
        return Err(ToolResult::error(ToolErrorKind::NotFound, format!("{path} does not exist")));
    }
    Ok(p)
}

pub(crate) fn read_file(workspace: &Path, limits: &ToolLimits, args: &Value) -> ToolResult {
    let path = match resolve(workspace, args) {
        Ok(p) => p,
        Err(r) => return r,
    };
    let offset = args.get("offset").and_then(Value::as_u64).unwrap_or(0);
    let want = args
        .get("max_bytes")
        .and_then(Value::as_u64)
        .map_or(limits.read_cap, |n| (n as usize).min(limits.read_cap));
    let read = || -> std::io::Result<(Vec<u8>, u64)> {
        let mut f = fs::File::open(&path)?;
        let total = f.metadata()?.len();
        f.seek(SeekFrom::Start(offset))?;
        let mut buf = Vec::new();
        f.take(want as u64).read_to_end(&mut buf)?;
        Ok((buf, total))
    };
    match read() {
        Ok((buf, total)) => ToolResult::record(json!({
            "path": rel(workspace, &path),
            "offset": offset,
            "bytes_read": buf.len(),
            "total_bytes": total,
            "truncated": offset + (buf.len() as u64) < total,
            "content": String::from_utf8_lossy(&buf),
        })),
        Err(e) => ToolResult::error(ToolErrorKind::Io, e.to_string()),
    }
}

pub(crate) fn grep_file(workspace: &Path, limits: &ToolLimits, args: &Value) -> ToolResult {
    let re = match Regex::new(str_arg(args, "pattern").unwrap_or_default()) {
        Ok(re) => re,
        Err(e) => return ToolResult::error(ToolErrorKind::InvalidArgument, e.to_string()),
    };
    let root = match resolve(workspace, args) {
        Ok(p) => p,
        Err(r) => return r,
    };
    let cap = args
        .get("max_matches")
        .and_then(Value::as_u64)
        .map_or(limits.grep_max_matches, |n| (n as usize).min(limits.grep_max_matches));
    let mut matches = Vec::new();
    let mut truncated = false;
    let walker = WalkDir::new(&root).sort_by_file_name().into_iter().filter_map(Result::ok);
    'files: for entry in walker.filter(|e| e.file_type().is_file()) {
        let Ok(text) = fs::read_to_string(entry.path()) else {
            continue;
        };
        for (i, line) in text.lines().enumerate() {
            if re.is_match(line) {
                if matches.len() == cap {
                    truncated = true;
                    break 'files;
                }
                matches.push(format!("{}:{}:{}", rel(workspace, entry.path()), i + 1, line));
            }
        }
    }
    ToolResult::record(json!({ "matches": matches, "truncated": truncated }))
}

fn media_type(path: &Path) -> Option<&'static str> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    Some(match ext.as_str() {
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        "gif" => "image/gif",
        "webp" => "image/webp",
        "svg" => "image/svg+xml",
        _ => return None,
    })
}

pub(crate) fn view_image(workspace: &Path, args: &Value) -> ToolResult {
    let path = match resolve(workspace, args) {
        Ok(p) => p,
        Err(r) => return r,
    };
    let Some(media) = media_type(&path) else {
        return ToolResult::error(ToolErrorKind::InvalidArgument, "not a recognised image type");
    };
    match fs::read(&path) {
        Ok(bytes) => ToolResult {
            ok: true,
            payload: Payload::Image {
                path: rel(workspace, &path),
                digest: hex::encode(Sha256::digest(&bytes)),
                media_type: media.into(),
                bytes: bytes.len() as u64,
            },
            duration_s: 0.0,
        },
        Err(e) => ToolResult::error(ToolErrorKind::Io, e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confinement() {
        let ws = tempfile::tempdir().unwrap();
        fs::write(ws.path().join("learnings.md"), "x").unwrap();
        assert!(confine(ws.path(), "learnings.md").is_ok());
        assert!(confine(ws.path(), "new/dir/file.txt").is_ok());
        assert!(confine(ws.path(), "a/../b").is_ok());
        assert_eq!(
            confine(ws.path(), "../etc/passwd"),
            Err(PathEscape("../etc/passwd".into()))
        );
        assert!(confine(ws.path(), "/etc/passwd").is_err());
        std::os::unix::fs::symlink("/etc", ws.path().join("link")).unwrap();
        assert!(confine(ws.path(), "link/passwd").is_err());
    }

    #[test]
    fn read_range_and_cap() {
        let ws = tempfile::tempdir().unwrap();
        fs::write(ws.path().join("f.txt"), "0123456789").unwrap();
        let limits = ToolLimits {
            read_cap: 4,
            ..ToolLimits::default()
        };
        let r = read_file(ws.path(), &limits, &json!({"path": "f.txt", "offset": 2}));
        let Payload::Record { value } = r.payload else { panic!() };
        assert_eq!(value["content"], "2345");
        assert_eq!(value["truncated"], true);
    }

    #[test]
    fn grep_caps_matches() {
        let ws = tempfile::tempdir().unwrap();
        fs::create_dir_all(ws.path().join("d")).unwrap();
        fs::write(ws.path().join("d/a.txt"), "hit 1\nmiss\nhit 2\n").unwrap();
        fs::write(ws.path().join("d/b.txt"), "hit 3\n").unwrap();
        let r = grep_file(
            ws.path(),
            &ToolLimits::default(),
            &json!({"pattern": "^hit", "path": "d", "max_matches": 2}),
        );
        let Payload::Record { value } = r.payload else { panic!() };
        assert_eq!(value["matches"], json!(["d/a.txt:1:hit 1", "d/a.txt:3:hit 2"]));
        assert_eq!(value["truncated"], true);
    }

    #[test]
    fn image_digest() {
        let ws = tempfile::tempdir().unwrap();
        fs::write(ws.path().join("plot.png"), b"\x89PNG fake").unwrap();
        let r = view_image(ws.path(), &json!({"path": "plot.png"}));
        let Payload::Image { digest, media_type, .. } = r.payload else { panic!() };
        assert_eq!(digest, hex::encode(Sha256::digest(b"\x89PNG fake")));
        assert_eq!(media_type, "image/png");
    }
}
