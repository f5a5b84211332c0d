use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{has_manifest, AdapterBundle, AdapterError, AdapterFile, ManifestFormat, ADAPTER_DIR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionPath {
    Resume,
    Customize,
    Generate,
}

/// Picks how phase 0 obtains an adapter: reuse the workspace's, start from
/// a built-in whose name equals `domain` exactly, or generate one.
pub fn resolution_path(workspace: &Path, domain: &str, builtin_names: &BTreeSet<String>) -> ResolutionPath {
    if has_manifest(&workspace.join(ADAPTER_DIR)) {
        ResolutionPath::Resume
    } else if builtin_names.contains(domain) {
        ResolutionPath::Customize
    } else {
        ResolutionPath::Generate
    }
}

/// Built-in adapters: one subdirectory per adapter, each holding the
/// eleven adapter files.
#[derive(Debug, Clone)]
pub struct BuiltinSet {
    dir: PathBuf,
    names: BTreeSet<String>,
}

impl BuiltinSet {
    /// The adapters shipped with this crate.
    pub fn shipped() -> Self {
        Self::open(Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/adapters")))
            .expect("shipped adapters directory is readable")
    }

    pub fn open(dir: &Path) -> Result<Self, AdapterError> {
        let mut names = BTreeSet::new();
        if dir.is_dir() {
            for entry in fs::read_dir(dir)? {
                let entry = entry?;
                if has_manifest(&entry.path()) {
                    names.insert(entry.file_name().to_string_lossy().into_owned());
                }
            }
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            names,
        })
    }

    pub fn names(&self) -> &BTreeSet<String> {
        &self.names
    }

    pub fn files(&self, name: &str) -> Result<(BTreeMap<AdapterFile, String>, ManifestFormat), AdapterError> {
        if !self.names.contains(name) {
            return Err(AdapterError::UnknownBuiltin(name.to_string()));
        }
        AdapterBundle::read_files(&self.dir.join(name))
    }

    pub fn bundle(&self, name: &str) -> Result<AdapterBundle, AdapterError> {
        let (files, format) = self.files(name)?;
        AdapterBundle::from_files(files, format)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_paths() {
        let ws = tempfile::tempdir().unwrap();
        let names: BTreeSet<String> = ["time_series".to_string(), "cuda_kernel".to_string()].into();
        assert_eq!(resolution_path(ws.path(), "time_series", &names), ResolutionPath::Customize);
        assert_eq!(
            resolution_path(ws.path(), "forecast exchange rates", &names),
            ResolutionPath::Generate
        );
        fs::create_dir_all(ws.path().join("adapter")).unwrap();
        fs::write(ws.path().join("adapter/manifest.json"), "{}").unwrap();
        assert_eq!(resolution_path(ws.path(), "time_series", &names), ResolutionPath::Resume);
    }

    #[test]
    fn shipped_builtins_are_complete() {
        let set = BuiltinSet::shipped();
        let names: Vec<_> = set.names().iter().cloned().collect();
        assert_eq!(names, ["cuda_kernel", "llm_speedrun", "time_series"]);
        for name in &names {
            let bundle = set.bundle(name).unwrap();
            assert!(bundle.validate().is_empty(), "{name}");
            assert_eq!(&bundle.manifest.domain, name);
        }
    }
}
