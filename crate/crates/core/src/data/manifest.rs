use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::filter::{filter_records, FilterOutcome};
use super::geometry::{square_crop_rect, CropRect};
use super::{DataError, RawImageRecord, Species};

const FORMAT: &str = "petgan-manifest";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ManifestConfig {
    pub min_resolution: u32,
    pub drop_humans: bool,
    /// Side of the processed square images.
    pub resolution: u32,
    pub augment: bool,
    /// Subsample every present species down to the rarest one's count.
    pub balance: bool,
    pub seed: u64,
}

impl Default for ManifestConfig {
    fn default() -> Self {
        Self {
            min_resolution: 256,
            drop_humans: true,
            resolution: 64,
            augment: true,
            balance: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub source: PathBuf,
    pub species: Species,
    pub crop: CropRect,
    pub resolution: u32,
    pub flip: bool,
}

impl ManifestEntry {
    /// Content id shared by an entry and its mirrored copy.
    pub fn id(&self) -> String {
        let key = serde_json::to_string(&(&self.source, self.species, self.crop, self.resolution)).expect("entry key");
        hex::encode(&Sha256::digest(key.as_bytes()).as_slice()[..16])
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeciesCounts {
    pub dog: usize,
    pub cat: usize,
}

impl SpeciesCounts {
    pub fn of(entries: &[ManifestEntry]) -> Self {
        let mut c = Self::default();
        for e in entries {
            match e.species {
                Species::Dog => c.dog += 1,
                Species::Cat => c.cat += 1,
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub config: ManifestConfig,
    pub entries: Vec<ManifestEntry>,
    pub counts: SpeciesCounts,
    pub checksum: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    config: ManifestConfig,
    counts: SpeciesCounts,
    entries: usize,
    checksum: String,
}

fn entry_line(e: &ManifestEntry) -> String {
    serde_json::to_string(e).expect("entry serializes")
}

fn checksum(entries: &[ManifestEntry]) -> String {
    let mut h = Sha256::new();
    for e in entries {
        h.update(entry_line(e).as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize().as_slice())
}

impl DatasetManifest {
    fn seal(config: ManifestConfig, entries: Vec<ManifestEntry>) -> Self {
        Self {
            counts: SpeciesCounts::of(&entries),
            checksum: checksum(&entries),
            config,
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Header line, then one entry per line.
    pub fn to_jsonl(&self) -> String {
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            config: self.config,
            counts: self.counts,
            entries: self.entries.len(),
            checksum: self.checksum.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for e in &self.entries {
            out.push_str(&entry_line(e));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, DataError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let parse_err = |line: usize, e: serde_json::Error| DataError::Parse {
            line: line + 1,
            reason: e.to_string(),
        };
        let (hl, header) = lines.next().ok_or(DataError::Parse {
            line: 1,
            reason: "missing manifest header".into(),
        })?;
        let header: Header = serde_json::from_str(header).map_err(|e| parse_err(hl, e))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(DataError::Parse {
                line: hl + 1,
                reason: format!("unsupported manifest {} v{}", header.format, header.version),
            });
        }
        let entries = lines
            .map(|(i, l)| serde_json::from_str::<ManifestEntry>(l).map_err(|e| parse_err(i, e)))
            .collect::<Result<Vec<_>, _>>()?;
        let m = Self::seal(header.config, entries);
        if m.checksum != header.checksum || m.entries.len() != header.entries {
            return Err(DataError::ChecksumMismatch {
                header: header.checksum,
                computed: m.checksum,
            });
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
        }
        std::fs::write(path, self.to_jsonl()).map_err(|e| DataError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::from_jsonl(&text)
    }
}

/// Adds the mirrored copy directly after each entry.
pub fn augment_flip(manifest: &DatasetManifest) -> Result<DatasetManifest, DataError> {
    if manifest.entries.iter().any(|e| e.flip) {
        return Err(DataError::AlreadyAugmented);
    }
    let entries = manifest
        .entries
        .iter()
        .flat_map(|e| [e.clone(), ManifestEntry { flip: true, ..e.clone() }])
        .collect();
    let config = ManifestConfig {
        augment: true,
        ..manifest.config
    };
    Ok(DatasetManifest::seal(config, entries))
}

#[derive(Debug, Clone)]
pub struct BuildOutcome {
    pub manifest: DatasetManifest,
    pub filter: FilterOutcome,
    /// Sources dropped by species balancing.
    pub unbalanced: Vec<PathBuf>,
}

/// Subsamples each species group to the smallest group size by seeded choice;
/// keeps the path order.
fn balance(records: Vec<RawImageRecord>, seed: u64) -> (Vec<RawImageRecord>, Vec<PathBuf>) {
    let mut groups: BTreeMap<Species, Vec<RawImageRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.species).or_default().push(r);
    }
    let Some(min) = groups.values().map(Vec::len).min() else {
        return (Vec::new(), Vec::new());
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (_, group) in groups {
        let mut pick = rand::seq::index::sample(&mut rng, group.len(), min).into_vec();
        pick.sort_unstable();
        let mut it = pick.into_iter().peekable();
        for (i, r) in group.into_iter().enumerate() {
            if it.peek() == Some(&i) {
                it.next();
                kept.push(r);
            } else {
                dropped.push(r.path);
            }
        }
    }
    kept.sort_by(|a, b| a.path.cmp(&b.path));
    dropped.sort();
    (kept, dropped)
}

/// Filter → sort by path → optional balancing → crop geometry → optional
/// flip augmentation.
pub fn build_manifest(records: &[RawImageRecord], config: ManifestConfig) -> Result<BuildOutcome, DataError> {
    if config.resolution == 0 {
        return Err(DataError::InvalidArgument("manifest resolution must be positive".into()));
    }
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| a.path.cmp(&b.path));
    if let Some(w) = sorted.windows(2).find(|w| w[0].path == w[1].path) {
        return Err(DataError::InvalidArgument(format!("duplicate record path {}", w[0].path.display())));
    }
    let filter = filter_records(&sorted, config.min_resolution, config.drop_humans);
    let (survivors, unbalanced) = if config.balance {
        balance(filter.kept.clone(), config.seed)
    } else {
        (filter.kept.clone(), Vec::new())
    };
    if survivors.is_empty() {
        return Err(DataError::NoSurvivors {
            summary: filter.summary(),
        });
    }
    let entries = survivors
        .iter()
        .map(|r| ManifestEntry {
            source: r.path.clone(),
            species: r.species,
            crop: square_crop_rect(r.width, r.height, r.bbox),
            resolution: config.resolution,
            flip: false,
        })
        .collect();
    let base = DatasetManifest::seal(ManifestConfig { augment: false, ..config }, entries);
    let manifest = if config.augment { augment_flip(&base)? } else { base };
    Ok(BuildOutcome {
        manifest,
        filter,
        unbalanced,
    })
}
