//! All-or-nothing output: every file is written to a temporary sibling first
//! and only renamed into place once all of them were written.

use std::io::Write;
use std::path::PathBuf;

use tempfile::NamedTempFile;

use crate::CliError;

#[derive(Default)]
pub struct Staged {
    files: Vec<(PathBuf, Vec<u8>)>,
}

impl Staged {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.files.push((path, bytes));
    }

    pub fn commit(self) -> Result<Vec<PathBuf>, CliError> {
        let io = |p: &PathBuf, e: std::io::Error| CliError::new("E_IO", format!("{}: {e}", p.display()));
        let mut temps = Vec::with_capacity(self.files.len());
        for (path, bytes) in &self.files {
            let dir = match path.parent() {
                Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
                _ => PathBuf::from("."),
            };
            std::fs::create_dir_all(&dir).map_err(|e| io(path, e))?;
            let mut tmp = NamedTempFile::new_in(&dir).map_err(|e| io(path, e))?;
            tmp.write_all(bytes).map_err(|e| io(path, e))?;
            tmp.as_file().sync_all().map_err(|e| io(path, e))?;
            temps.push(tmp);
        }
        let mut written = Vec::with_capacity(temps.len());
        for (tmp, (path, _)) in temps.into_iter().zip(self.files) {
            tmp.persist(&path).map_err(|e| io(&path, e.error))?;
            written.push(path);
        }
        Ok(written)
    }
}
