use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::EngagementError;
use crate::metrics::Verdict;

/// One state change. Sample images travel inside the event so the journal
/// alone reconstructs the store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    SampleRegistered {
        id: String,
        /// Base64 PNG bytes.
        png: String,
        checkpoint_id: String,
        tau: Option<f64>,
        seed: u64,
        index: usize,
    },
    VerdictRecorded {
        sample_id: String,
        verdict: Verdict,
        note: String,
    },
    PostCreated {
        post_id: String,
        sample_id: String,
        page: String,
        posted_at: DateTime<Utc>,
        relevant: bool,
        caption: String,
    },
    SnapshotRecorded {
        post_id: String,
        observed_at: DateTime<Utc>,
        likes: u64,
        comments: u64,
        followers: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub seq: u64,
    pub at: DateTime<Utc>,
    #[serde(flatten)]
    pub event: Event,
}

/// Append-only JSON-lines file. Every append reaches the disk before it
/// returns; a line without its terminating newline is a torn write and is cut
/// off when the journal is opened.
#[derive(Debug)]
pub struct Journal {
    path: PathBuf,
    file: File,
    next_seq: u64,
}

impl Journal {
    /// Opens or creates the journal and returns every complete entry.
    pub fn open(path: &Path) -> Result<(Self, Vec<Entry>), EngagementError> {
        let io = |source| EngagementError::Io {
            context: path.display().to_string(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)
            .map_err(io)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(io)?;
        let complete = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
        let mut entries = Vec::new();
        for (i, line) in bytes[..complete].split(|b| *b == b'\n').enumerate() {
            if line.is_empty() {
                continue;
            }
            let corrupt = |reason: String| EngagementError::Corrupt {
                path: path.to_path_buf(),
                line: i + 1,
                reason,
            };
            let entry: Entry = serde_json::from_slice(line).map_err(|e| corrupt(e.to_string()))?;
            if entry.seq != entries.len() as u64 + 1 {
                return Err(corrupt(format!("sequence {} after {}", entry.seq, entries.len())));
            }
            entries.push(entry);
        }
        if complete < bytes.len() {
            file.set_len(complete as u64).map_err(io)?;
            file.sync_all().map_err(io)?;
        }
        file.seek(SeekFrom::End(0)).map_err(io)?;
        let next_seq = entries.len() as u64 + 1;
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
                next_seq,
            },
            entries,
        ))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Entries written so far.
    pub fn len(&self) -> u64 {
        self.next_seq - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn append(&mut self, at: DateTime<Utc>, event: Event) -> Result<Entry, EngagementError> {
        let entry = Entry {
            seq: self.next_seq,
            at,
            event,
        };
        let mut line = serde_json::to_vec(&entry).expect("journal entry serializes");
        line.push(b'\n');
        let io = |source| EngagementError::Io {
            context: self.path.display().to_string(),
            source,
        };
        self.file.write_all(&line).map_err(io)?;
        self.file.sync_data().map_err(io)?;
        self.next_seq += 1;
        Ok(entry)
    }

    pub fn sync(&self) -> Result<(), EngagementError> {
        self.file.sync_all().map_err(|source| EngagementError::Io {
            context: self.path.display().to_string(),
            source,
        })
    }
}
