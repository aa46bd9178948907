//! Source-record filtering, square cropping, resizing, flip augmentation,
//! normalization and the checksummed dataset manifest.

mod filter;
mod geometry;
mod manifest;
mod pixels;
mod store;
pub mod synthetic;

pub use filter::{filter_records, FilterOutcome, Rejection, RejectionReason};
pub use geometry::{square_crop, square_crop_rect, CropRect};
pub use manifest::{
    augment_flip, build_manifest, BuildOutcome, DatasetManifest, ManifestConfig, ManifestEntry, SpeciesCounts,
};
pub use pixels::{denormalize, flip_horizontal, normalize, normalize_image, resize};
pub use store::{load_image_set, process_entry, ProcessedStore};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("no records survived preprocessing ({summary})")]
    NoSurvivors { summary: String },
    #[error("manifest already contains flipped entries")]
    AlreadyAugmented,
    #[error("expected a square image, got {width}×{height}")]
    NonSquare { width: u32, height: u32 },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("{path}: record says {expected:?}, file is {actual:?}")]
    DimensionMismatch {
        path: PathBuf,
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error("manifest checksum mismatch: header {header}, entries hash to {computed}")]
    ChecksumMismatch { header: String, computed: String },
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Species {
    Dog,
    Cat,
}

impl Species {
    pub const ALL: [Species; 2] = [Species::Dog, Species::Cat];

    /// Class index used by classifiers.
    pub fn index(self) -> usize {
        match self {
            Species::Dog => 0,
            Species::Cat => 1,
        }
    }
}

/// Axis-aligned annotation box in pixels; (x, y) is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn fits_in(&self, width: u32, height: u32) -> bool {
        self.w > 0 && self.h > 0 && self.x as u64 + self.w as u64 <= width as u64 && self.y as u64 + self.h as u64 <= height as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawImageRecord {
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub species: Species,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BBox>,
    #[serde(default)]
    pub contains_human: bool,
}

/// Parses one JSON record per non-blank line.
pub fn parse_records(text: &str) -> Result<Vec<RawImageRecord>, DataError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| DataError::Parse {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn read_records(path: &Path) -> Result<Vec<RawImageRecord>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_records(&text)
}

pub fn records_to_jsonl(records: &[RawImageRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_lines_parse() {
        let text = r#"{"path":"a.png","width":400,"height":300,"species":"dog","bbox":{"x":1,"y":2,"w":3,"h":4},"contains_human":false}

{"path":"b.png","width":10,"height":10,"species":"cat"}"#;
        let r = parse_records(text).unwrap();
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].bbox, Some(BBox { x: 1, y: 2, w: 3, h: 4 }));
        assert!(!r[1].contains_human);
        assert_eq!(parse_records(&records_to_jsonl(&r)).unwrap(), r);
    }

    #[test]
    fn bad_line_reports_number() {
        let err = parse_records("{\"path\":\"a\"}").unwrap_err();
        assert!(matches!(err, DataError::Parse { line: 1, .. }));
    }

    #[test]
    fn bbox_containment() {
        assert!(BBox { x: 0, y: 0, w: 10, h: 10 }.fits_in(10, 10));
        assert!(!BBox { x: 1, y: 0, w: 10, h: 10 }.fits_in(10, 10));
        assert!(!BBox { x: 0, y: 0, w: 0, h: 1 }.fits_in(10, 10));
    }
}
