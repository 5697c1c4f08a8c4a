//! Append-only JSON-lines journal of job changes.
//!
//! Each line is the full job snapshot after one change, plus the output
//! archive when that change produced one. Replaying keeps the last line per
//! job. Credentials never reach this file: snapshots carry no proxy and no
//! renewal password.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use base64::Engine;
use gridgate_core::backend::{JobEventSink, JobSnapshot};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

#[derive(Serialize, Deserialize)]
struct Line {
    snapshot: JobSnapshot,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    output: Option<String>,
}

pub struct Journal {
    path: PathBuf,
    file: Mutex<File>,
}

impl Journal {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Latest state of every job, in order of first appearance. A torn
    /// final line is ignored.
    pub fn replay(path: &Path) -> std::io::Result<Vec<(JobSnapshot, Option<Vec<u8>>)>> {
        let file = match File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e),
        };
        let mut jobs: IndexMap<String, (JobSnapshot, Option<Vec<u8>>)> = IndexMap::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = match serde_json::from_str(&line) {
                Ok(l) => l,
                Err(e) => {
                    tracing::warn!(line = n + 1, "skipping unreadable journal line: {e}");
                    continue;
                }
            };
            let output = parsed
                .output
                .and_then(|b| base64::engine::general_purpose::STANDARD.decode(b).ok());
            let id = parsed.snapshot.id.clone();
            let entry = jobs.entry(id).or_insert((parsed.snapshot.clone(), None));
            entry.0 = parsed.snapshot;
            if output.is_some() {
                entry.1 = output;
            }
            if !entry.0.status.is_done() {
                entry.1 = None;
            }
        }
        Ok(jobs.into_values().collect())
    }
}

impl JobEventSink for Journal {
    fn record(&self, snapshot: &JobSnapshot, output: Option<&[u8]>) {
        let line = Line {
            snapshot: snapshot.clone(),
            output: output.map(|o| base64::engine::general_purpose::STANDARD.encode(o)),
        };
        let mut text = serde_json::to_string(&line).expect("snapshot serializes");
        text.push('\n');
        let mut file = self.file.lock().unwrap();
        if let Err(e) = file.write_all(text.as_bytes()).and_then(|()| file.flush()) {
            tracing::error!(path = %self.path.display(), "journal write failed: {e}");
        }
    }
}
