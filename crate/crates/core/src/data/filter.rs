use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::RawImageRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectionReason {
    /// Either side below the minimum.
    Resolution,
    Human,
    /// Annotation box missing from the image bounds, or zero extents.
    InvalidAnnotation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub path: PathBuf,
    pub reason: RejectionReason,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<RawImageRecord>,
    pub rejections: Vec<Rejection>,
}

impl FilterOutcome {
    pub fn count(&self, reason: RejectionReason) -> usize {
        self.rejections.iter().filter(|r| r.reason == reason).count()
    }

    /// e.g. `kept 3, rejected 2 (resolution 1, human 1, invalid-annotation 0)`.
    pub fn summary(&self) -> String {
        format!(
            "kept {}, rejected {} (resolution {}, human {}, invalid-annotation {})",
            self.kept.len(),
            self.rejections.len(),
            self.count(RejectionReason::Resolution),
            self.count(RejectionReason::Human),
            self.count(RejectionReason::InvalidAnnotation),
        )
    }
}

/// Keeps records with both sides at least `min_resolution` and, when
/// `drop_humans`, no person present. Input order is preserved. A record
/// failing several checks is logged once, under the first failing check in
/// the order annotation, resolution, human.
pub fn filter_records(records: &[RawImageRecord], min_resolution: u32, drop_humans: bool) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for r in records {
        let reason = if r.width == 0 || r.height == 0 || r.bbox.is_some_and(|b| !b.fits_in(r.width, r.height)) {
            Some(RejectionReason::InvalidAnnotation)
        } else if r.width < min_resolution || r.height < min_resolution {
            Some(RejectionReason::Resolution)
        } else if drop_humans && r.contains_human {
            Some(RejectionReason::Human)
        } else {
            None
        };
        match reason {
            Some(reason) => out.rejections.push(Rejection {
                path: r.path.clone(),
                reason,
            }),
            None => out.kept.push(r.clone()),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{BBox, Species};

    fn rec(w: u32, h: u32, human: bool) -> RawImageRecord {
        RawImageRecord {
            path: format!("{w}x{h}-{human}.png").into(),
            width: w,
            height: h,
            species: Species::Dog,
            bbox: None,
            contains_human: human,
        }
    }

    #[test]
    fn fixtures() {
        let out = filter_records(&[rec(200, 300, false), rec(512, 512, true), rec(256, 256, false), rec(255, 256, false)], 256, true);
        assert_eq!(out.kept, vec![rec(256, 256, false)]);
        let reasons: Vec<_> = out.rejections.iter().map(|r| r.reason).collect();
        assert_eq!(reasons, [RejectionReason::Resolution, RejectionReason::Human, RejectionReason::Resolution]);
        assert!(out.summary().starts_with("kept 1, rejected 3"));
    }

    #[test]
    fn humans_kept_when_not_dropping() {
        assert_eq!(filter_records(&[rec(512, 512, true)], 256, false).kept.len(), 1);
    }

    #[test]
    fn out_of_bounds_box_rejected() {
        let mut r = rec(300, 300, false);
        r.bbox = Some(BBox { x: 250, y: 0, w: 100, h: 10 });
        assert_eq!(filter_records(&[r], 256, true).rejections[0].reason, RejectionReason::InvalidAnnotation);
    }
}
