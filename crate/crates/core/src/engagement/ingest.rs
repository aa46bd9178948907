use chrono::{DateTime, Utc};
use serde::Serialize;

use super::store::{SnapshotRecord, Store};
use super::EngagementError;

/// Required CSV header, in order.
pub const SNAPSHOT_COLUMNS: [&str; 5] = ["post_id", "observed_at", "likes", "comments", "followers"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowRejection {
    /// 1-based line in the CSV text, the header being line 1.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestOutcome {
    pub accepted: usize,
    pub rejected: Vec<RowRejection>,
}

fn parse_count(field: &str) -> Result<u64, &'static str> {
    match field.parse::<i128>() {
        Ok(v) if v < 0 => Err("negative count"),
        Ok(v) => u64::try_from(v).map_err(|_| "count out of range"),
        Err(_) => Err("malformed count"),
    }
}

fn parse_row(record: &csv::StringRecord) -> Result<SnapshotRecord, String> {
    if record.len() != SNAPSHOT_COLUMNS.len() {
        return Err(format!("expected {} fields, found {}", SNAPSHOT_COLUMNS.len(), record.len()));
    }
    let observed_at = DateTime::parse_from_rfc3339(&record[1])
        .map_err(|_| "malformed timestamp".to_string())?
        .with_timezone(&Utc);
    Ok(SnapshotRecord {
        post_id: record[0].to_string(),
        observed_at,
        likes: parse_count(&record[2])?,
        comments: parse_count(&record[3])?,
        followers: parse_count(&record[4])?,
    })
}

impl Store {
    /// Persists every valid row on its own; invalid rows are reported with a
    /// reason and do not stop the rest.
    pub fn ingest_snapshots(&mut self, csv_text: &str, at: DateTime<Utc>) -> Result<IngestOutcome, EngagementError> {
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(csv_text.as_bytes());
        let header = rdr
            .headers()
            .map_err(|e| EngagementError::InvalidInput(format!("unreadable header: {e}")))?;
        if header.iter().ne(SNAPSHOT_COLUMNS) {
            return Err(EngagementError::InvalidInput(format!(
                "header must be {}, found {}",
                SNAPSHOT_COLUMNS.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut outcome = IngestOutcome::default();
        for row in rdr.records() {
            let (line, result) = match row {
                Ok(r) => (
                    r.position().map_or(0, |p| p.line() as usize),
                    parse_row(&r).and_then(|snap| {
                        self.record_snapshot(snap, at).map_err(|e| match e {
                            EngagementError::NotFound { .. } => "unknown post id".to_string(),
                            EngagementError::Conflict(reason) | EngagementError::Rejected(reason) => reason,
                            other => other.to_string(),
                        })
                    }),
                ),
                Err(e) => (
                    e.position().map_or(0, |p| p.line() as usize),
                    Err(format!("unreadable row: {e}")),
                ),
            };
            match result {
                Ok(()) => outcome.accepted += 1,
                Err(reason) => outcome.rejected.push(RowRejection { line, reason }),
            }
        }
        Ok(outcome)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engagement::NewPost;
    use crate::metrics::Verdict;
    use crate::train::SampleProvenance;

    fn store_with_post() -> (tempfile::TempDir, Store) {
        let dir = tempfile::tempdir().unwrap();
        let mut s = Store::open(dir.path()).unwrap();
        let at: DateTime<Utc> = "2021-03-01T00:00:00Z".parse().unwrap();
        let prov = SampleProvenance {
            index: 0,
            checkpoint_id: "c".into(),
            tau: None,
            seed: 0,
        };
        let (r, _) = s.register_sample(b"x", &prov, at).unwrap();
        s.record_verdict(&r.id, Verdict::Fit, "", at).unwrap();
        s.create_post(
            NewPost {
                post_id: Some("p1".into()),
                sample_id: r.id,
                page: None,
                posted_at: at,
                relevant: true,
                caption: String::new(),
            },
            at,
        )
        .unwrap();
        (dir, s)
    }

    const HEADER: &str = "post_id,observed_at,likes,comments,followers\n";

    #[test]
    fn valid_rows() {
        let (_d, mut s) = store_with_post();
        let csv = format!(
            "{HEADER}p1,2021-03-01T10:00:00Z,1,0,10\np1,2021-03-01T11:00:00Z,2,0,10\np1,2021-03-02T00:00:00+00:00,5,1,11\n"
        );
        let out = s.ingest_snapshots(&csv, Utc::now()).unwrap();
        assert_eq!((out.accepted, out.rejected.len()), (3, 0));
    }

    #[test]
    fn per_row_rejections() {
        let (_d, mut s) = store_with_post();
        let csv = format!(
            "{HEADER}p1,2021-03-01T10:00:00Z,-1,0,10\n\
             p1,2021-03-01T10:00:00Z,1,0,10\n\
             p1,2021-03-01T10:00:00Z,1,0,10\n\
             p9,2021-03-01T10:00:00Z,1,0,10\n\
             p1,yesterday,1,0,10\n\
             p1,2021-03-01T12:00:00Z,x,0,10\n\
             p1,2021-03-01T12:00:00Z,1,0\n"
        );
        let out = s.ingest_snapshots(&csv, Utc::now()).unwrap();
        assert_eq!(out.accepted, 1);
        let reasons: Vec<(usize, &str)> = out.rejected.iter().map(|r| (r.line, r.reason.as_str())).collect();
        assert_eq!(
            reasons,
            [
                (2, "negative count"),
                (4, "duplicate"),
                (5, "unknown post id"),
                (6, "malformed timestamp"),
                (7, "malformed count"),
                (8, "expected 5 fields, found 4"),
            ]
        );
        assert_eq!(s.state().snapshots.len(), 1);
    }

    #[test]
    fn header_must_match() {
        let (_d, mut s) = store_with_post();
        let before = s.journal_len();
        assert!(matches!(
            s.ingest_snapshots("post,observed_at,likes,comments,followers\n", Utc::now()),
            Err(EngagementError::InvalidInput(_))
        ));
        assert_eq!(s.journal_len(), before);
    }
}
