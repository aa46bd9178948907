use chrono::{DateTime, Utc};
use serde::Serialize;

use super::store::{SnapshotRecord, Store};
use super::EngagementError;
use crate::metrics::{
    classify_popularity, compute_i_ies, compute_p_ies, round_display, Iies, IiesWindow, Observation, Pies, Popularity,
    PostEngagement,
};

/// Posts summed into the page-level score.
pub const P_IES_POSTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PostReport {
    pub post_id: String,
    pub sample_id: String,
    pub posted_at: DateTime<Utc>,
    pub relevant: bool,
    /// Counts from the latest snapshot at or before the report instant.
    pub likes: u64,
    pub comments: u64,
    pub last_observed_at: Option<DateTime<Utc>>,
    pub i_ies: Iies,
    /// Some later snapshot showed fewer likes or comments than an earlier one.
    pub count_decreased: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PageReport {
    pub handle: String,
    pub as_of: DateTime<Utc>,
    pub followers: u64,
    /// Snapshot the follower count was taken from.
    pub followers_observed_at: DateTime<Utc>,
    pub category: Popularity,
    pub p_ies: Pies,
    /// `p_ies.value` rounded to three decimals.
    pub p_ies_display: String,
    /// Most recent first.
    pub posts: Vec<PostReport>,
    /// Posts counted with zero engagement because nothing was observed yet.
    pub posts_without_snapshot: Vec<String>,
}

fn decreased(snaps: &[&SnapshotRecord]) -> bool {
    snaps
        .windows(2)
        .any(|w| w[1].likes < w[0].likes || w[1].comments < w[0].comments)
}

impl Store {
    /// Page-level score over the page's most recent relevant posts at
    /// `as_of`, with each post's 24-hour score. Only data observed at or
    /// before `as_of` is used; followers come from the latest such snapshot.
    pub fn report_page(&self, handle: &str, as_of: DateTime<Utc>, window: IiesWindow) -> Result<PageReport, EngagementError> {
        let posts: Vec<_> = self.posts()?.into_iter().filter(|p| p.page == handle).collect();
        let first = posts.first().ok_or_else(|| EngagementError::not_found("page", handle))?;
        if as_of < first.posted_at {
            return Err(EngagementError::InvalidInput(format!(
                "as_of {as_of} precedes the first post at {}",
                first.posted_at
            )));
        }
        let state = self.state();
        let visible: Vec<_> = posts.iter().filter(|p| p.posted_at <= as_of).collect();
        let latest_followers = visible
            .iter()
            .flat_map(|p| state.snapshots_of(&p.post_id))
            .filter(|s| s.observed_at <= as_of)
            .max_by(|a, b| a.observed_at.cmp(&b.observed_at).then_with(|| a.post_id.cmp(&b.post_id)))
            .ok_or_else(|| EngagementError::InvalidInput(format!("no follower count observed for {handle} by {as_of}")))?;
        let followers = latest_followers.followers;

        let mut reports = Vec::with_capacity(visible.len());
        let mut engagements = Vec::with_capacity(visible.len());
        let mut without = Vec::new();
        for p in visible.iter().rev() {
            let snaps: Vec<&SnapshotRecord> = state
                .snapshots_of(&p.post_id)
                .filter(|s| s.observed_at <= as_of)
                .collect();
            let last = snaps.last();
            if last.is_none() {
                without.push(p.post_id.clone());
            }
            let observations: Vec<Observation> = snaps
                .iter()
                .map(|s| Observation {
                    observed_at: s.observed_at,
                    likes: s.likes,
                    comments: s.comments,
                })
                .collect();
            let (likes, comments) = last.map_or((0, 0), |s| (s.likes, s.comments));
            engagements.push(PostEngagement {
                post_id: p.post_id.clone(),
                posted_at: p.posted_at,
                relevant: p.relevant,
                likes,
                comments,
            });
            reports.push(PostReport {
                post_id: p.post_id.clone(),
                sample_id: p.sample_id.clone(),
                posted_at: p.posted_at,
                relevant: p.relevant,
                likes,
                comments,
                last_observed_at: last.map(|s| s.observed_at),
                i_ies: compute_i_ies(p.posted_at, &observations, followers, window)?,
                count_decreased: decreased(&snaps),
            });
        }
        let p_ies = compute_p_ies(&engagements, followers, P_IES_POSTS)?;
        without.retain(|id| p_ies.post_ids.contains(id));
        Ok(PageReport {
            handle: handle.to_string(),
            as_of,
            followers,
            followers_observed_at: latest_followers.observed_at,
            category: classify_popularity(followers),
            p_ies_display: round_display(p_ies.value, 3),
            p_ies,
            posts: reports,
            posts_without_snapshot: without,
        })
    }
}
