//! Output directories that become immutable once a `DONE` file is written.

use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

pub const DONE: &str = "DONE";

#[derive(Debug)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    /// Creates `path`, or clears it when `force` is set. A complete or
    /// non-empty directory without `force` is a configuration error.
    pub fn prepare(path: &Path, force: bool) -> Result<Self> {
        if path.exists() {
            let complete = path.join(DONE).exists();
            let nonempty = std::fs::read_dir(path).map_err(|e| CliError::io(path, e))?.next().is_some();
            if !force {
                if complete {
                    return Err(CliError::Config(format!(
                        "{} is a completed run; pass --force to recompute it",
                        path.display()
                    )));
                }
                if nonempty {
                    return Err(CliError::Config(format!(
                        "{} exists and is not empty; pass --force to overwrite it",
                        path.display()
                    )));
                }
            } else {
                std::fs::remove_dir_all(path).map_err(|e| CliError::io(path, e))?;
            }
        }
        std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))?;
        Ok(RunDir { path: path.to_path_buf() })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn finish(self) -> Result<()> {
        let p = self.path.join(DONE);
        std::fs::write(&p, b"").map_err(|e| CliError::io(&p, e))
    }
}

pub fn is_complete(path: &Path) -> bool {
    path.join(DONE).exists()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn done_requires_force() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("run");
        let r = RunDir::prepare(&p, false).unwrap();
        std::fs::write(r.join("x"), b"1").unwrap();
        r.finish().unwrap();
        assert!(is_complete(&p));
        assert_eq!(RunDir::prepare(&p, false).unwrap_err().exit_code(), 2);
        RunDir::prepare(&p, true).unwrap();
        assert!(!p.join("x").exists());
        assert!(!is_complete(&p));
    }

    #[test]
    fn empty_existing_directory_is_reused() {
        let tmp = tempfile::tempdir().unwrap();
        RunDir::prepare(tmp.path(), false).unwrap();
        std::fs::write(tmp.path().join("stray"), b"").unwrap();
        assert!(RunDir::prepare(tmp.path(), false).is_err());
    }
}
