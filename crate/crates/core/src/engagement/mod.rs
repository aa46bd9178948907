//! Generated samples, curator verdicts, posts and engagement snapshots,
//! persisted in one append-only journal, with the HTTP service over them.

mod ingest;
mod journal;
mod report;
mod service;
mod store;

use std::path::PathBuf;

use thiserror::Error;

pub use ingest::{IngestOutcome, RowRejection, SNAPSHOT_COLUMNS};
pub use journal::{Entry, Event, Journal};
pub use report::{PageReport, PostReport, P_IES_POSTS};
pub use service::{bind, router, serve, ServiceConfig, SharedStore};
pub use store::{
    CurationSummary, NewPost, PostRecord, SampleRecord, SampleStatus, SnapshotRecord, Store, StoreState, VerdictChange,
    DEFAULT_PAGE, JOURNAL_FILE,
};

use crate::metrics::MetricsError;

#[derive(Debug, Error)]
pub enum EngagementError {
    #[error("{kind} {id} not found")]
    NotFound { kind: &'static str, id: String },
    #[error("{0}")]
    InvalidInput(String),
    /// Clashes with an existing record.
    #[error("{0}")]
    Conflict(String),
    /// A precondition on current state does not hold.
    #[error("{0}")]
    Rejected(String),
    #[error("{path}: line {line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl EngagementError {
    pub(crate) fn not_found(kind: &'static str, id: &str) -> Self {
        EngagementError::NotFound {
            kind,
            id: id.to_string(),
        }
    }
}
