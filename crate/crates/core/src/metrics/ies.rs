use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::MetricsError;

/// (likes + comments) / followers.
pub fn compute_ies(likes: u64, comments: u64, followers: u64) -> Result<f64, MetricsError> {
    if followers == 0 {
        return Err(MetricsError::ZeroFollowers);
    }
    Ok((likes + comments) as f64 / followers as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Popularity {
    High,
    Medium,
    Low,
}

impl Popularity {
    /// Render order for comparisons.
    pub const ORDER: [Popularity; 3] = [Popularity::High, Popularity::Medium, Popularity::Low];

    pub fn name(self) -> &'static str {
        match self {
            Popularity::High => "high",
            Popularity::Medium => "medium",
            Popularity::Low => "low",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Popularity::High => "High-popularity pages (average)",
            Popularity::Medium => "Medium-popularity pages (average)",
            Popularity::Low => "Low-popularity pages (average)",
        }
    }
}

/// Low below 100 followers, high above 10,000, medium in between inclusive.
pub fn classify_popularity(followers: u64) -> Popularity {
    match followers {
        0..=99 => Popularity::Low,
        100..=10_000 => Popularity::Medium,
        _ => Popularity::High,
    }
}

/// Engagement counts of one post at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub observed_at: DateTime<Utc>,
    pub likes: u64,
    pub comments: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IiesWindow {
    /// Time after posting at which engagement is read.
    pub target_minutes: i64,
    /// Largest accepted distance between a snapshot and the target instant.
    pub tolerance_minutes: i64,
}

impl Default for IiesWindow {
    fn default() -> Self {
        Self {
            target_minutes: 24 * 60,
            tolerance_minutes: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Iies {
    Measured {
        value: f64,
        observed_at: DateTime<Utc>,
        /// Snapshot time minus the target instant, in seconds.
        offset_seconds: i64,
    },
    /// No snapshot within the window; not the same as zero engagement.
    Unmeasurable,
}

impl Iies {
    pub fn value(&self) -> Option<f64> {
        match self {
            Iies::Measured { value, .. } => Some(*value),
            Iies::Unmeasurable => None,
        }
    }
}

/// Image-level score from the snapshot nearest to `posted_at + target`
/// within the tolerance. Equidistant snapshots resolve to the earlier one.
pub fn compute_i_ies(
    posted_at: DateTime<Utc>,
    snapshots: &[Observation],
    followers: u64,
    window: IiesWindow,
) -> Result<Iies, MetricsError> {
    let target = posted_at + Duration::minutes(window.target_minutes);
    let tolerance = Duration::minutes(window.tolerance_minutes);
    let best = snapshots
        .iter()
        .filter(|s| (s.observed_at - target).abs() <= tolerance)
        .min_by_key(|s| ((s.observed_at - target).abs(), s.observed_at));
    Ok(match best {
        None => Iies::Unmeasurable,
        Some(s) => Iies::Measured {
            value: compute_ies(s.likes, s.comments, followers)?,
            observed_at: s.observed_at,
            offset_seconds: (s.observed_at - target).num_seconds(),
        },
    })
}

/// A post with its latest known counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostEngagement {
    pub post_id: String,
    pub posted_at: DateTime<Utc>,
    pub relevant: bool,
    pub likes: u64,
    pub comments: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pies {
    pub value: f64,
    pub followers: u64,
    pub engagements: u64,
    /// Ids of the posts summed, most recent first.
    pub post_ids: Vec<String>,
    /// Fewer than k relevant posts were available.
    pub partial: bool,
    pub k: usize,
}

/// Page-level score over the k most recent relevant posts. Posts sharing a
/// timestamp are ordered by id, the greater id counting as more recent.
pub fn compute_p_ies(posts: &[PostEngagement], followers: u64, k: usize) -> Result<Pies, MetricsError> {
    if k == 0 {
        return Err(MetricsError::InvalidInput("k must be positive".into()));
    }
    let mut relevant: Vec<&PostEngagement> = posts.iter().filter(|p| p.relevant).collect();
    if relevant.is_empty() {
        return Err(MetricsError::NoRelevantPosts);
    }
    relevant.sort_by(|a, b| b.posted_at.cmp(&a.posted_at).then_with(|| b.post_id.cmp(&a.post_id)));
    let partial = relevant.len() < k;
    relevant.truncate(k);
    let (likes, comments) = relevant
        .iter()
        .fold((0u64, 0u64), |(l, c), p| (l + p.likes, c + p.comments));
    Ok(Pies {
        value: compute_ies(likes, comments, followers)?,
        followers,
        engagements: likes + comments,
        post_ids: relevant.iter().map(|p| p.post_id.clone()).collect(),
        partial,
        k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t0() -> DateTime<Utc> {
        "2021-03-01T12:00:00Z".parse().unwrap()
    }

    fn obs(minutes_after: i64, likes: u64, comments: u64) -> Observation {
        Observation {
            observed_at: t0() + Duration::minutes(minutes_after),
            likes,
            comments,
        }
    }

    #[test]
    fn ies_fixtures() {
        assert_eq!(compute_ies(20, 5, 100).unwrap(), 0.25);
        assert_eq!(compute_ies(0, 0, 7).unwrap(), 0.0);
        assert_eq!(compute_ies(1254, 0, 1000).unwrap(), 1.254);
        assert!(matches!(compute_ies(1, 1, 0), Err(MetricsError::ZeroFollowers)));
    }

    #[test]
    fn popularity_boundaries() {
        use Popularity::*;
        for (f, p) in [(0, Low), (55, Low), (99, Low), (100, Medium), (10_000, Medium), (10_001, High), (9_900_000, High)] {
            assert_eq!(classify_popularity(f), p, "{f}");
        }
    }

    #[test]
    fn i_ies_nearest_in_window() {
        let w = IiesWindow::default();
        let r = compute_i_ies(t0(), &[obs(23 * 60 + 30, 10, 0), obs(26 * 60, 50, 0)], 100, w).unwrap();
        assert_eq!(r.value(), Some(0.10));
        assert!(matches!(r, Iies::Measured { offset_seconds: -1800, .. }));

        let r = compute_i_ies(t0(), &[obs(24 * 60, 5, 5)], 100, w).unwrap();
        assert_eq!(r.value(), Some(0.10));

        let r = compute_i_ies(t0(), &[obs(60, 5, 5), obs(48 * 60, 9, 9)], 100, w).unwrap();
        assert_eq!(r, Iies::Unmeasurable);
    }

    #[test]
    fn i_ies_ties_and_edges() {
        let w = IiesWindow::default();
        let r = compute_i_ies(t0(), &[obs(24 * 60 + 10, 2, 0), obs(24 * 60 - 10, 1, 0)], 10, w).unwrap();
        assert_eq!(r.value(), Some(0.1));
        // exactly at the tolerance edge is inside
        let r = compute_i_ies(t0(), &[obs(25 * 60, 3, 0)], 10, w).unwrap();
        assert!(r.value().is_some());
        let narrow = IiesWindow {
            tolerance_minutes: 5,
            ..w
        };
        assert_eq!(compute_i_ies(t0(), &[obs(25 * 60, 3, 0)], 10, narrow).unwrap(), Iies::Unmeasurable);
    }

    fn post(i: i64, likes: u64, comments: u64) -> PostEngagement {
        PostEngagement {
            post_id: format!("p{i:02}"),
            posted_at: t0() + Duration::hours(i),
            relevant: true,
            likes,
            comments,
        }
    }

    #[test]
    fn p_ies_fixtures() {
        let posts: Vec<_> = (0..10).map(|i| post(i, 5, 1)).collect();
        assert_eq!(compute_p_ies(&posts, 60, 10).unwrap().value, 1.0);

        let mut posts: Vec<_> = (2..12).map(|i| post(i, 5, 1)).collect();
        posts.push(post(0, 100_000, 0));
        posts.push(post(1, 100_000, 0));
        let r = compute_p_ies(&posts, 60, 10).unwrap();
        assert_eq!(r.value, 1.0);
        assert!(!r.partial);
        assert_eq!(r.post_ids[0], "p11");

        let mut fixture: Vec<_> = (0..9).map(|i| post(i, 100, 25)).collect();
        fixture.push(post(9, 100, 29));
        assert_eq!(compute_p_ies(&fixture, 1000, 10).unwrap().value, 1.254);
    }

    #[test]
    fn p_ies_partial_relevance_and_errors() {
        let mut posts: Vec<_> = (0..7).map(|i| post(i, 1, 0)).collect();
        let r = compute_p_ies(&posts, 7, 10).unwrap();
        assert!(r.partial);
        assert_eq!(r.value, 1.0);
        posts.iter_mut().for_each(|p| p.relevant = false);
        assert!(matches!(compute_p_ies(&posts, 7, 10), Err(MetricsError::NoRelevantPosts)));
    }

    #[test]
    fn p_ies_k1_is_latest_post_ies() {
        let posts = vec![post(0, 9, 1), post(3, 4, 2), post(1, 7, 7)];
        assert_eq!(compute_p_ies(&posts, 8, 1).unwrap().value, compute_ies(4, 2, 8).unwrap());
    }

    #[test]
    fn p_ies_timestamp_ties_use_greater_id() {
        let mut a = post(5, 1, 0);
        let mut b = post(5, 2, 0);
        a.post_id = "a".into();
        b.post_id = "b".into();
        assert_eq!(compute_p_ies(&[a, b], 1, 1).unwrap().post_ids, ["b"]);
    }
}
