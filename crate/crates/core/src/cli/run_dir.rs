use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::error::{Error, Result};

pub const LOCK_FILE: &str = ".lock";
pub const MANIFEST: &str = "manifest.json";
pub const TIMING_FILE: &str = "timing.json";
pub const BENCH_FILE: &str = "bench.json";

/// Exclusive handle on a run directory. The lock file is removed on drop.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        for sub in ["data", "models", "features", "reports", "leaderboards"] {
            let p = root.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let lock = root.join(LOCK_FILE);
        let mut f = fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => Error::Config(format!(
                    "run directory {} is locked by another process (remove {} if stale)",
                    root.display(),
                    lock.display()
                )),
                _ => Error::io(&lock, e),
            })?;
        writeln!(f, "{}", std::process::id()).map_err(|e| Error::io(&lock, e))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn split_file(&self, problem: &str) -> PathBuf {
        self.data().join(format!("{problem}.split.json"))
    }

    pub fn models(&self, problem: &str) -> Result<PathBuf> {
        self.ensure(self.root.join("models").join(problem))
    }

    pub fn features(&self, problem: &str) -> Result<PathBuf> {
        self.ensure(self.root.join("features").join(problem))
    }

    pub fn reports_root(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn reports(&self, problem: &str) -> Result<PathBuf> {
        self.ensure(self.reports_root().join(problem))
    }

    pub fn leaderboards(&self) -> PathBuf {
        self.root.join("leaderboards")
    }

    fn ensure(&self, p: PathBuf) -> Result<PathBuf> {
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    /// Rewrites `manifest.json`: the configuration plus a checksum of every
    /// reproducible artifact. Timing files and image folders are left out.
    pub fn write_manifest(&self, config: &RunConfig, problems: &[String]) -> Result<()> {
        let mut artifacts = BTreeMap::new();
        for sub in ["models", "features", "reports", "leaderboards", "data"] {
            collect(&self.root, &self.root.join(sub), &mut artifacts)?;
        }
        let manifest = RunManifest {
            config: config.clone(),
            problems: problems.to_vec(),
            artifacts,
        };
        write_json(&self.root.join(MANIFEST), &manifest)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.root.join(LOCK_FILE));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub problems: Vec<String>,
    /// Relative path to SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

/// Files whose content depends on wall-clock measurements.
pub fn is_timing_artifact(name: &str) -> bool {
    name == TIMING_FILE || name == BENCH_FILE || name.ends_with(".timing.csv") || name == "timing.md"
}

fn collect(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    if !dir.is_dir() {
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if p.is_dir() {
            // image folders are covered by each problem's own manifest
            if name != crate::data::DEFECT_DIR && name != crate::data::CLEAN_DIR {
                collect(root, &p, out)?;
            }
        } else if !is_timing_artifact(&name) {
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            let rel = p.strip_prefix(root).unwrap_or(&p).to_string_lossy().replace('\\', "/");
            out.insert(rel, hex::encode(Sha256::digest(&bytes)));
        }
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let tmp = tempfile::tempdir().unwrap();
        let a = RunDir::open(tmp.path()).unwrap();
        assert!(matches!(RunDir::open(tmp.path()), Err(Error::Config(_))));
        drop(a);
        RunDir::open(tmp.path()).unwrap();
    }

    #[test]
    fn manifest_skips_timing_files() {
        let tmp = tempfile::tempdir().unwrap();
        let run = RunDir::open(tmp.path()).unwrap();
        let r = run.reports("p").unwrap();
        fs::write(r.join("fusion.json"), "{}").unwrap();
        fs::write(r.join(TIMING_FILE), "{}").unwrap();
        run.write_manifest(&RunConfig::default(), &["p".into()]).unwrap();
        let m: RunManifest = read_json(&tmp.path().join(MANIFEST)).unwrap();
        assert_eq!(m.artifacts.keys().collect::<Vec<_>>(), ["reports/p/fusion.json"]);
    }
}
