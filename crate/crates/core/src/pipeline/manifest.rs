//! Stage directories and their manifests.
//!
//! A stage writes into `<name>.partial/` and renames it to `<name>/` only
//! after every artifact and the manifest are in place, so an interrupted
//! or failed stage leaves nothing but the marked partial directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.txt";

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// `key=value` lines, sorted by key.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    /// Records the hash of an input file under `input.<name>`.
    pub fn input(&mut self, name: &str, path: &Path) -> Result<()> {
        self.set(format!("input.{name}"), sha256_file(path)?);
        Ok(())
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut m = Self::default();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            m.set(k, v);
        }
        Ok(m)
    }
}

/// A completed stage: its directory and manifest.
#[derive(Clone, Debug)]
pub struct Stage {
    pub name: String,
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Stage {
    /// Loads a finished stage, or a dependency error naming it.
    pub fn require(work: &Path, name: &str) -> Result<Self> {
        let dir = work.join(name);
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|_| {
            Error::Dependency(format!(
                "stage `{name}` has not completed (no {}); run `{name}` first",
                path.display()
            ))
        })?;
        Ok(Self {
            name: name.to_string(),
            dir,
            manifest: Manifest::from_text(&text)?,
        })
    }

    pub fn exists(work: &Path, name: &str) -> bool {
        work.join(name).join(MANIFEST).exists()
    }

    /// Path of an artifact, checked against the hash in the manifest.
    pub fn artifact(&self, file: &str) -> Result<PathBuf> {
        let path = self.dir.join(file);
        let recorded = self.manifest.get(&format!("output.{file}")).ok_or_else(|| {
            Error::Dependency(format!("stage `{}` did not produce {file}", self.name))
        })?;
        if !path.exists() {
            return Err(Error::Dependency(format!(
                "{} is missing; rerun `{}`",
                path.display(),
                self.name
            )));
        }
        if sha256_file(&path)? != recorded {
            return Err(Error::Dependency(format!(
                "{} changed after stage `{}` wrote it; rerun `{}`",
                path.display(),
                self.name,
                self.name
            )));
        }
        Ok(path)
    }
}

/// A stage being produced.
pub struct StageWriter {
    name: String,
    final_dir: PathBuf,
    partial: PathBuf,
    pub manifest: Manifest,
}

impl StageWriter {
    pub fn begin(work: &Path, name: &str) -> Result<Self> {
        let final_dir = work.join(name);
        let partial = work.join(format!("{name}.partial"));
        if partial.exists() {
            fs::remove_dir_all(&partial).map_err(|e| Error::file(&partial, e))?;
        }
        fs::create_dir_all(&partial).map_err(|e| Error::file(&partial, e))?;
        let mut manifest = Manifest::default();
        manifest.set("stage", name);
        Ok(Self {
            name: name.to_string(),
            final_dir,
            partial,
            manifest,
        })
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.partial.join(file)
    }

    /// Writes an artifact and records its hash.
    pub fn write(&mut self, file: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.path(file);
        fs::write(&p, contents.as_ref()).map_err(|e| Error::file(&p, e))?;
        self.record(file)?;
        Ok(p)
    }

    /// Records the hash of an artifact written directly to [`Self::path`].
    pub fn record(&mut self, file: &str) -> Result<()> {
        let hash = sha256_file(&self.path(file))?;
        self.manifest.set(format!("output.{file}"), hash);
        Ok(())
    }

    /// Writes the manifest and moves the stage into place.
    pub fn commit(self) -> Result<Stage> {
        let mpath = self.partial.join(MANIFEST);
        fs::write(&mpath, self.manifest.to_text()).map_err(|e| Error::file(&mpath, e))?;
        if self.final_dir.exists() {
            fs::remove_dir_all(&self.final_dir).map_err(|e| Error::file(&self.final_dir, e))?;
        }
        fs::rename(&self.partial, &self.final_dir).map_err(|e| Error::file(&self.final_dir, e))?;
        Ok(Stage {
            name: self.name,
            dir: self.final_dir,
            manifest: self.manifest,
        })
    }
}
