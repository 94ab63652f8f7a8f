//! Append-only session journals, one JSON-lines file per session.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::session::Resolved;
use crate::AnsweredQuery;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum JournalEntry {
    Create { id: String, resolved: Resolved },
    Answer(AnsweredQuery),
}

#[derive(Clone, Debug)]
pub struct Journal {
    path: PathBuf,
}

impl Journal {
    pub fn create(dir: &Path, id: &str) -> std::io::Result<Self> {
        let path = dir.join(format!("{id}.jsonl"));
        OpenOptions::new().create_new(true).write(true).open(&path)?;
        Ok(Self { path })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one record and flushes it to disk.
    pub fn append(&self, entry: &JournalEntry) -> std::io::Result<()> {
        let mut line = serde_json::to_vec(entry)?;
        line.push(b'\n');
        let mut f = OpenOptions::new().append(true).open(&self.path)?;
        f.write_all(&line)?;
        f.sync_data()
    }

    pub fn read(path: &Path) -> std::io::Result<Vec<JournalEntry>> {
        let mut out = Vec::new();
        for line in BufReader::new(File::open(path)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line) {
                Ok(e) => out.push(e),
                // a torn final write loses only the unconfirmed answer
                Err(e) => {
                    log::warn!("{}: stopping at unreadable record: {e}", path.display());
                    break;
                }
            }
        }
        Ok(out)
    }

    /// All journals in `dir`, sorted by session id.
    pub fn scan(dir: &Path) -> std::io::Result<Vec<(String, Journal, Vec<JournalEntry>)>> {
        let mut out = Vec::new();
        for e in std::fs::read_dir(dir)? {
            let path = e?.path();
            if path.extension().is_some_and(|x| x == "jsonl") {
                let id = path.file_stem().expect("file name").to_string_lossy().into_owned();
                let entries = Self::read(&path)?;
                out.push((id, Journal { path }, entries));
            }
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(out)
    }
}
