use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::journal::{Entry, Event, Journal};
use super::EngagementError;
use crate::metrics::{round_display, Verdict};
use crate::train::SampleProvenance;

pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const DEFAULT_PAGE: &str = "petgan";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleStatus {
    Pending,
    Fit,
    Unfit,
}

impl SampleStatus {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pending" => Some(SampleStatus::Pending),
            "fit" => Some(SampleStatus::Fit),
            "unfit" => Some(SampleStatus::Unfit),
            _ => None,
        }
    }
}

impl From<Verdict> for SampleStatus {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Fit => SampleStatus::Fit,
            Verdict::Unfit => SampleStatus::Unfit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    /// SHA-256 of the PNG bytes.
    pub id: String,
    pub checkpoint_id: String,
    pub tau: Option<f64>,
    pub seed: u64,
    pub index: usize,
    pub status: SampleStatus,
    pub note: Option<String>,
    pub verdict_at: Option<DateTime<Utc>>,
    pub registered_at: DateTime<Utc>,
    /// Journal position of the registration; the review queue follows it.
    pub registered_seq: u64,
}

/// One journaled verdict, with the status it replaced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictChange {
    pub seq: u64,
    pub sample_id: String,
    pub from: SampleStatus,
    pub to: Verdict,
    pub note: String,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostRecord {
    pub post_id: String,
    pub sample_id: String,
    pub page: String,
    pub posted_at: DateTime<Utc>,
    pub relevant: bool,
    pub caption: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub post_id: String,
    pub observed_at: DateTime<Utc>,
    pub likes: u64,
    pub comments: u64,
    pub followers: u64,
}

/// Request to publish a fit sample. Without a `post_id` the next free
/// `post-NNNN` is used; without a `page` the store's default page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewPost {
    #[serde(default)]
    pub post_id: Option<String>,
    pub sample_id: String,
    #[serde(default)]
    pub page: Option<String>,
    pub posted_at: DateTime<Utc>,
    pub relevant: bool,
    #[serde(default)]
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurationSummary {
    pub fit: usize,
    pub unfit: usize,
    pub pending: usize,
    /// Fit fraction of decided samples; absent before the first verdict.
    pub rate: Option<f64>,
    /// Rate as a percentage with one decimal, e.g. `15.2%`.
    pub display: Option<String>,
}

/// Everything the journal describes. Two stores built from the same journal
/// compare equal.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StoreState {
    pub samples: BTreeMap<String, SampleRecord>,
    pub images: HashMap<String, Vec<u8>>,
    pub verdicts: Vec<VerdictChange>,
    pub posts: BTreeMap<String, PostRecord>,
    pub snapshots: BTreeMap<(String, DateTime<Utc>), SnapshotRecord>,
}

enum Check {
    Apply,
    /// Repeats the current state exactly; nothing to journal.
    Unchanged,
}

fn valid_name(s: &str) -> bool {
    !s.is_empty() && s.len() <= 128 && s.bytes().all(|b| b.is_ascii_alphanumeric() || b"._-@".contains(&b))
}

impl StoreState {
    fn check(&self, event: &Event) -> Result<Check, EngagementError> {
        match event {
            Event::SampleRegistered { id, .. } => Ok(if self.samples.contains_key(id) {
                Check::Unchanged
            } else {
                Check::Apply
            }),
            Event::VerdictRecorded {
                sample_id,
                verdict,
                note,
            } => {
                let s = self.samples.get(sample_id).ok_or_else(|| EngagementError::not_found("sample", sample_id))?;
                let same = s.status == SampleStatus::from(*verdict) && s.note.as_deref() == Some(note.as_str());
                Ok(if same { Check::Unchanged } else { Check::Apply })
            }
            Event::PostCreated {
                post_id,
                sample_id,
                page,
                ..
            } => {
                if !valid_name(post_id) || !valid_name(page) {
                    return Err(EngagementError::InvalidInput(format!(
                        "post id {post_id:?} and page {page:?} must be 1-128 characters from [A-Za-z0-9._-@]"
                    )));
                }
                let s = self.samples.get(sample_id).ok_or_else(|| EngagementError::not_found("sample", sample_id))?;
                if let Some(existing) = self.posts.get(post_id) {
                    return if post_matches(existing, event) {
                        Ok(Check::Unchanged)
                    } else {
                        Err(EngagementError::Conflict(format!("post {post_id} already exists")))
                    };
                }
                if s.status != SampleStatus::Fit {
                    return Err(EngagementError::Rejected(format!(
                        "sample {sample_id} is {}; unfit samples are never posted",
                        serde_json::to_value(s.status).expect("status serializes").as_str().unwrap_or("?")
                    )));
                }
                Ok(Check::Apply)
            }
            Event::SnapshotRecorded {
                post_id, observed_at, ..
            } => {
                let post = self.posts.get(post_id).ok_or_else(|| EngagementError::not_found("post", post_id))?;
                if self.snapshots.contains_key(&(post_id.clone(), *observed_at)) {
                    return Err(EngagementError::Conflict("duplicate".into()));
                }
                if *observed_at < post.posted_at {
                    return Err(EngagementError::Rejected("observed before posting".into()));
                }
                Ok(Check::Apply)
            }
        }
    }

    fn apply(&mut self, entry: &Entry) {
        match &entry.event {
            Event::SampleRegistered {
                id,
                png,
                checkpoint_id,
                tau,
                seed,
                index,
            } => {
                self.images
                    .insert(id.clone(), BASE64.decode(png).expect("checked before apply"));
                self.samples.insert(
                    id.clone(),
                    SampleRecord {
                        id: id.clone(),
                        checkpoint_id: checkpoint_id.clone(),
                        tau: *tau,
                        seed: *seed,
                        index: *index,
                        status: SampleStatus::Pending,
                        note: None,
                        verdict_at: None,
                        registered_at: entry.at,
                        registered_seq: entry.seq,
                    },
                );
            }
            Event::VerdictRecorded {
                sample_id,
                verdict,
                note,
            } => {
                let s = self.samples.get_mut(sample_id).expect("checked before apply");
                self.verdicts.push(VerdictChange {
                    seq: entry.seq,
                    sample_id: sample_id.clone(),
                    from: s.status,
                    to: *verdict,
                    note: note.clone(),
                    at: entry.at,
                });
                s.status = (*verdict).into();
                s.note = Some(note.clone());
                s.verdict_at = Some(entry.at);
            }
            Event::PostCreated {
                post_id,
                sample_id,
                page,
                posted_at,
                relevant,
                caption,
            } => {
                self.posts.insert(
                    post_id.clone(),
                    PostRecord {
                        post_id: post_id.clone(),
                        sample_id: sample_id.clone(),
                        page: page.clone(),
                        posted_at: *posted_at,
                        relevant: *relevant,
                        caption: caption.clone(),
                        created_at: entry.at,
                    },
                );
            }
            Event::SnapshotRecorded {
                post_id,
                observed_at,
                likes,
                comments,
                followers,
            } => {
                self.snapshots.insert(
                    (post_id.clone(), *observed_at),
                    SnapshotRecord {
                        post_id: post_id.clone(),
                        observed_at: *observed_at,
                        likes: *likes,
                        comments: *comments,
                        followers: *followers,
                    },
                );
            }
        }
    }

    /// No post may reference a pending sample.
    pub fn check_invariants(&self) -> Result<(), EngagementError> {
        for p in self.posts.values() {
            match self.samples.get(&p.sample_id) {
                Some(s) if s.status != SampleStatus::Pending => {}
                _ => {
                    return Err(EngagementError::Invariant(format!(
                        "post {} references sample {} that is missing or pending",
                        p.post_id, p.sample_id
                    )))
                }
            }
        }
        Ok(())
    }

    /// Snapshots of one post in observation order.
    pub fn snapshots_of<'a>(&'a self, post_id: &'a str) -> impl Iterator<Item = &'a SnapshotRecord> + 'a {
        self.snapshots
            .range((post_id.to_string(), DateTime::<Utc>::MIN_UTC)..=(post_id.to_string(), DateTime::<Utc>::MAX_UTC))
            .map(|(_, s)| s)
    }
}

fn post_matches(existing: &PostRecord, event: &Event) -> bool {
    matches!(event, Event::PostCreated { sample_id, page, posted_at, relevant, caption, .. }
        if *sample_id == existing.sample_id && *page == existing.page && *posted_at == existing.posted_at
            && *relevant == existing.relevant && *caption == existing.caption)
}

/// Single-writer store over one journal file. Mutations are validated,
/// journaled and synced before they are applied and acknowledged.
#[derive(Debug)]
pub struct Store {
    journal: Journal,
    state: StoreState,
    default_page: String,
}

impl Store {
    /// Opens `data_dir/journal.jsonl`, replaying it from empty.
    pub fn open(data_dir: &Path) -> Result<Self, EngagementError> {
        Self::open_with_page(data_dir, DEFAULT_PAGE)
    }

    pub fn open_with_page(data_dir: &Path, default_page: &str) -> Result<Self, EngagementError> {
        if !valid_name(default_page) {
            return Err(EngagementError::InvalidInput(format!("invalid page handle {default_page:?}")));
        }
        let path = data_dir.join(JOURNAL_FILE);
        let (journal, entries) = Journal::open(&path)?;
        let mut state = StoreState::default();
        for (i, entry) in entries.iter().enumerate() {
            let corrupt = |reason: String| EngagementError::Corrupt {
                path: path.clone(),
                line: i + 1,
                reason,
            };
            if let Event::SampleRegistered { png, .. } = &entry.event {
                BASE64.decode(png).map_err(|e| corrupt(e.to_string()))?;
            }
            match state.check(&entry.event) {
                Ok(Check::Apply) => state.apply(entry),
                Ok(Check::Unchanged) => return Err(corrupt("entry repeats the current state".into())),
                Err(e) => return Err(corrupt(e.to_string())),
            }
        }
        state.check_invariants()?;
        Ok(Self {
            journal,
            state,
            default_page: default_page.to_string(),
        })
    }

    pub fn state(&self) -> &StoreState {
        &self.state
    }

    pub fn journal_path(&self) -> &Path {
        self.journal.path()
    }

    pub fn journal_len(&self) -> u64 {
        self.journal.len()
    }

    pub fn default_page(&self) -> &str {
        &self.default_page
    }

    fn commit(&mut self, event: Event, at: DateTime<Utc>) -> Result<bool, EngagementError> {
        match self.state.check(&event)? {
            Check::Unchanged => Ok(false),
            Check::Apply => {
                let entry = self.journal.append(at, event)?;
                self.state.apply(&entry);
                Ok(true)
            }
        }
    }

    /// Adds a pending sample keyed by the hash of its bytes. Registering the
    /// same bytes again returns the existing record and `false`.
    pub fn register_sample(
        &mut self,
        png: &[u8],
        provenance: &SampleProvenance,
        at: DateTime<Utc>,
    ) -> Result<(SampleRecord, bool), EngagementError> {
        if png.is_empty() {
            return Err(EngagementError::InvalidInput("empty image".into()));
        }
        let id = hex::encode(Sha256::digest(png).as_slice());
        let created = self.commit(
            Event::SampleRegistered {
                id: id.clone(),
                png: BASE64.encode(png),
                checkpoint_id: provenance.checkpoint_id.clone(),
                tau: provenance.tau,
                seed: provenance.seed,
                index: provenance.index,
            },
            at,
        )?;
        Ok((self.state.samples[&id].clone(), created))
    }

    /// Sets a sample's verdict. Resubmitting the current verdict and note
    /// changes nothing and writes nothing.
    pub fn record_verdict(
        &mut self,
        sample_id: &str,
        verdict: Verdict,
        note: &str,
        at: DateTime<Utc>,
    ) -> Result<SampleRecord, EngagementError> {
        self.commit(
            Event::VerdictRecorded {
                sample_id: sample_id.to_string(),
                verdict,
                note: note.to_string(),
            },
            at,
        )?;
        Ok(self.state.samples[sample_id].clone())
    }

    pub fn create_post(&mut self, post: NewPost, at: DateTime<Utc>) -> Result<PostRecord, EngagementError> {
        let post_id = match post.post_id {
            Some(id) => id,
            None => (self.state.posts.len() + 1..)
                .map(|n| format!("post-{n:04}"))
                .find(|id| !self.state.posts.contains_key(id))
                .expect("unbounded search"),
        };
        self.commit(
            Event::PostCreated {
                post_id: post_id.clone(),
                sample_id: post.sample_id,
                page: post.page.unwrap_or_else(|| self.default_page.clone()),
                posted_at: post.posted_at,
                relevant: post.relevant,
                caption: post.caption,
            },
            at,
        )?;
        Ok(self.state.posts[&post_id].clone())
    }

    /// Stores one observation. A second observation of a post at the same
    /// instant is rejected as a duplicate and leaves the store unchanged.
    pub fn record_snapshot(&mut self, snapshot: SnapshotRecord, at: DateTime<Utc>) -> Result<(), EngagementError> {
        self.commit(
            Event::SnapshotRecorded {
                post_id: snapshot.post_id,
                observed_at: snapshot.observed_at,
                likes: snapshot.likes,
                comments: snapshot.comments,
                followers: snapshot.followers,
            },
            at,
        )?;
        Ok(())
    }

    pub fn sample(&self, id: &str) -> Option<&SampleRecord> {
        self.state.samples.get(id)
    }

    pub fn image(&self, id: &str) -> Option<&[u8]> {
        self.state.images.get(id).map(Vec::as_slice)
    }

    /// Samples in registration order, optionally filtered by status.
    pub fn samples(&self, status: Option<SampleStatus>) -> Vec<&SampleRecord> {
        let mut out: Vec<&SampleRecord> = self
            .state
            .samples
            .values()
            .filter(|s| status.is_none_or(|st| s.status == st))
            .collect();
        out.sort_by_key(|s| s.registered_seq);
        out
    }

    /// Journaled verdicts of one sample, oldest first.
    pub fn verdict_history(&self, sample_id: &str) -> Vec<&VerdictChange> {
        self.state.verdicts.iter().filter(|v| v.sample_id == sample_id).collect()
    }

    pub fn posts(&self) -> Result<Vec<&PostRecord>, EngagementError> {
        self.state.check_invariants()?;
        let mut out: Vec<&PostRecord> = self.state.posts.values().collect();
        out.sort_by(|a, b| a.posted_at.cmp(&b.posted_at).then_with(|| a.post_id.cmp(&b.post_id)));
        Ok(out)
    }

    pub fn curation(&self) -> CurationSummary {
        let count = |st| self.state.samples.values().filter(|s| s.status == st).count();
        let (fit, unfit, pending) = (count(SampleStatus::Fit), count(SampleStatus::Unfit), count(SampleStatus::Pending));
        let verdicts: Vec<Verdict> = std::iter::repeat_n(Verdict::Fit, fit)
            .chain(std::iter::repeat_n(Verdict::Unfit, unfit))
            .collect();
        let rate = crate::metrics::curation_rate(&verdicts).ok();
        CurationSummary {
            fit,
            unfit,
            pending,
            rate,
            display: rate.map(|r| format!("{}%", round_display(r * 100.0, 1))),
        }
    }

    /// Writes `<post>.png` and `<post>.txt` (the caption) for manual upload.
    pub fn export_posting_kit(&self, post_id: &str, dir: &Path) -> Result<(PathBuf, PathBuf), EngagementError> {
        self.state.check_invariants()?;
        let post = self
            .state
            .posts
            .get(post_id)
            .ok_or_else(|| EngagementError::not_found("post", post_id))?;
        let image = self.image(&post.sample_id).expect("posted samples are registered");
        let io = |path: &Path, source| EngagementError::Io {
            context: path.display().to_string(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let png = dir.join(format!("{post_id}.png"));
        let txt = dir.join(format!("{post_id}.txt"));
        std::fs::write(&png, image).map_err(|e| io(&png, e))?;
        std::fs::write(&txt, &post.caption).map_err(|e| io(&txt, e))?;
        Ok((png, txt))
    }

    pub fn sync(&self) -> Result<(), EngagementError> {
        self.journal.sync()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn t(s: &str) -> DateTime<Utc> {
        s.parse().unwrap()
    }

    fn prov(index: usize) -> SampleProvenance {
        SampleProvenance {
            index,
            checkpoint_id: "abcd".into(),
            tau: Some(0.5),
            seed: 9,
        }
    }

    fn store() -> (tempfile::TempDir, Store) {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::open(dir.path()).unwrap();
        (dir, s)
    }

    #[test]
    fn content_hash_ids_dedupe() {
        let (_d, mut s) = store();
        let at = t("2021-03-01T00:00:00Z");
        let (a, created) = s.register_sample(b"png-a", &prov(0), at).unwrap();
        assert!(created);
        let (b, created) = s.register_sample(b"png-a", &prov(5), at).unwrap();
        assert!(!created);
        assert_eq!(a, b);
        assert_eq!(s.journal_len(), 1);
        assert_eq!(a.id, hex::encode(Sha256::digest(b"png-a").as_slice()));
        assert_eq!(s.image(&a.id), Some(&b"png-a"[..]));
    }

    #[test]
    fn verdict_transitions_are_journaled() {
        let (_d, mut s) = store();
        let at = t("2021-03-01T00:00:00Z");
        let (a, _) = s.register_sample(b"a", &prov(0), at).unwrap();
        let r = s.record_verdict(&a.id, Verdict::Fit, "sharp", at).unwrap();
        assert_eq!(r.status, SampleStatus::Fit);
        assert_eq!(s.verdict_history(&a.id).len(), 1);
        let r = s.record_verdict(&a.id, Verdict::Unfit, "re-review", at).unwrap();
        assert_eq!(r.status, SampleStatus::Unfit);
        let h = s.verdict_history(&a.id);
        assert_eq!((h[1].from, h[1].to), (SampleStatus::Fit, Verdict::Unfit));
        // identical resubmission is a no-op
        s.record_verdict(&a.id, Verdict::Unfit, "re-review", at).unwrap();
        assert_eq!(s.verdict_history(&a.id).len(), 2);
        assert!(matches!(
            s.record_verdict("nope", Verdict::Fit, "", at),
            Err(EngagementError::NotFound { kind: "sample", .. })
        ));
    }

    #[test]
    fn posting_requires_fit() {
        let (_d, mut s) = store();
        let at = t("2021-03-01T00:00:00Z");
        let (a, _) = s.register_sample(b"a", &prov(0), at).unwrap();
        let post = NewPost {
            post_id: None,
            sample_id: a.id.clone(),
            page: None,
            posted_at: at,
            relevant: true,
            caption: "hi".into(),
        };
        assert!(matches!(s.create_post(post.clone(), at), Err(EngagementError::Rejected(_))));
        s.record_verdict(&a.id, Verdict::Unfit, "", at).unwrap();
        assert!(matches!(s.create_post(post.clone(), at), Err(EngagementError::Rejected(_))));
        s.record_verdict(&a.id, Verdict::Fit, "", at).unwrap();
        let p1 = s.create_post(post.clone(), at).unwrap();
        let p2 = s.create_post(post, at).unwrap();
        assert_eq!((p1.post_id.as_str(), p2.post_id.as_str()), ("post-0001", "post-0002"));
        assert_eq!(p1.page, DEFAULT_PAGE);
        assert_eq!(s.posts().unwrap().len(), 2);
    }

    #[test]
    fn snapshots_unique_per_instant() {
        let (_d, mut s) = store();
        let at = t("2021-03-01T00:00:00Z");
        let (a, _) = s.register_sample(b"a", &prov(0), at).unwrap();
        s.record_verdict(&a.id, Verdict::Fit, "", at).unwrap();
        let p = s
            .create_post(
                NewPost {
                    post_id: Some("ig_1".into()),
                    sample_id: a.id,
                    page: None,
                    posted_at: at,
                    relevant: true,
                    caption: String::new(),
                },
                at,
            )
            .unwrap();
        let snap = SnapshotRecord {
            post_id: p.post_id.clone(),
            observed_at: t("2021-03-02T00:00:00Z"),
            likes: 3,
            comments: 1,
            followers: 50,
        };
        s.record_snapshot(snap.clone(), at).unwrap();
        assert!(matches!(s.record_snapshot(snap.clone(), at), Err(EngagementError::Conflict(_))));
        let early = SnapshotRecord {
            observed_at: t("2021-02-28T00:00:00Z"),
            ..snap
        };
        assert!(matches!(s.record_snapshot(early, at), Err(EngagementError::Rejected(_))));
        assert_eq!(s.state().snapshots_of("ig_1").count(), 1);
    }

    #[test]
    fn reopen_reproduces_state() {
        let dir = tempfile::tempdir().unwrap();
        let at = t("2021-03-01T00:00:00Z");
        let before = {
            let mut s = Store::open(dir.path()).unwrap();
            for i in 0..4u8 {
                let (r, _) = s.register_sample(&[i], &prov(i as usize), at).unwrap();
                s.record_verdict(&r.id, if i % 2 == 0 { Verdict::Fit } else { Verdict::Unfit }, "n", at)
                    .unwrap();
            }
            s.state().clone()
        };
        let s = Store::open(dir.path()).unwrap();
        assert_eq!(s.state(), &before);
        let c = s.curation();
        assert_eq!((c.fit, c.unfit, c.rate), (2, 2, Some(0.5)));
        assert_eq!(c.display.as_deref(), Some("50.0%"));
    }

    #[test]
    fn posting_kit() {
        let (d, mut s) = store();
        let at = t("2021-03-01T00:00:00Z");
        let (a, _) = s.register_sample(b"img", &prov(0), at).unwrap();
        s.record_verdict(&a.id, Verdict::Fit, "", at).unwrap();
        let p = s
            .create_post(
                NewPost {
                    post_id: None,
                    sample_id: a.id,
                    page: None,
                    posted_at: at,
                    relevant: true,
                    caption: "a very good dog".into(),
                },
                at,
            )
            .unwrap();
        let (png, txt) = s.export_posting_kit(&p.post_id, &d.path().join("kit")).unwrap();
        assert_eq!(std::fs::read(png).unwrap(), b"img");
        assert_eq!(std::fs::read_to_string(txt).unwrap(), "a very good dog");
    }
}
