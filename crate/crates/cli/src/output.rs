use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::failure::{CliResult, Failure};

/// Output directory of one run. Remembers what it created so a failed run
/// can be rolled back without touching anything that was there before.
pub struct OutDir {
    root: PathBuf,
    created_root: bool,
    inputs: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    files: Vec<PathBuf>,
}

fn absolute(p: &Path) -> PathBuf {
    p.canonicalize()
        .unwrap_or_else(|_| std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf()))
}

impl OutDir {
    /// `inputs` are files the run reads; writing over any of them is refused.
    pub fn create(root: &Path, inputs: &[&Path]) -> CliResult<Self> {
        let created_root = !root.exists();
        fs::create_dir_all(root).map_err(|e| Failure::config(format!("cannot create {}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            created_root,
            inputs: inputs.iter().map(|p| absolute(p)).collect(),
            dirs: vec![],
            files: vec![],
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Registers `rel` as an output and returns its full path, creating
    /// parent directories.
    pub fn file(&mut self, rel: impl AsRef<Path>) -> CliResult<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            let mut missing = vec![];
            let mut cur = parent;
            while !cur.exists() {
                missing.push(cur.to_path_buf());
                match cur.parent() {
                    Some(p) => cur = p,
                    None => break,
                }
            }
            fs::create_dir_all(parent)?;
            self.dirs.extend(missing.into_iter().rev());
        }
        let abs = absolute(&path);
        if self.inputs.contains(&abs) {
            return Err(Failure::config(format!("refusing to overwrite input {}", path.display())));
        }
        self.files.push(path.clone());
        Ok(path)
    }

    pub fn write(&mut self, rel: impl AsRef<Path>, bytes: impl AsRef<[u8]>) -> CliResult<PathBuf> {
        let path = self.file(rel)?;
        fs::write(&path, bytes)?;
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: impl AsRef<Path>, value: &T) -> CliResult<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(rel, text)
    }

    /// Removes everything this run wrote.
    pub fn rollback(self) {
        if self.created_root {
            let _ = fs::remove_dir_all(&self.root);
            return;
        }
        for f in self.files.iter().rev() {
            let _ = fs::remove_file(f);
        }
        for d in self.dirs.iter().rev() {
            let _ = fs::remove_dir(d);
        }
    }
}

/// Fully resolved configuration of a run, written as `run.json`.
#[derive(Serialize)]
pub struct RunRecord<'a, C: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    pub config: &'a C,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub deviations: Vec<String>,
}

pub fn write_run_record<C: Serialize>(out: &mut OutDir, command: &str, config: &C, deviations: Vec<String>) -> CliResult<()> {
    let record = RunRecord {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config,
        deviations,
    };
    out.write_json("run.json", &record)?;
    Ok(())
}
