use std::path::{Path, PathBuf};

use image::RgbImage;
use rayon::prelude::*;

use super::geometry::CropRect;
use super::manifest::{DatasetManifest, ManifestEntry};
use super::pixels::{flip_horizontal, normalize_image, resize};
use super::DataError;
use crate::imaging::encode_png;
use crate::train::ImageSet;

fn decode(path: &Path) -> Result<RgbImage, DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    image::load_from_memory(&bytes)
        .map(|i| i.to_rgb8())
        .map_err(|e| DataError::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

fn resolve(root: &Path, source: &Path) -> PathBuf {
    if source.is_absolute() {
        source.to_path_buf()
    } else {
        root.join(source)
    }
}

/// Crop, resize and optional mirror of one entry's source image, as bytes.
pub fn process_entry(entry: &ManifestEntry, source_root: &Path) -> Result<RgbImage, DataError> {
    let path = resolve(source_root, &entry.source);
    let img = decode(&path)?;
    let CropRect { x, y, side } = entry.crop;
    let (w, h) = img.dimensions();
    if x as u64 + side as u64 > w as u64 || y as u64 + side as u64 > h as u64 {
        return Err(DataError::InvalidArgument(format!(
            "{}: crop {side}px at ({x}, {y}) exceeds the {w}×{h} image",
            path.display()
        )));
    }
    let cropped = image::imageops::crop_imm(&img, x, y, side, side).to_image();
    let sized = resize(&cropped, entry.resolution)?;
    Ok(if entry.flip { flip_horizontal(&sized) } else { sized })
}

fn uniform_resolution(manifest: &DatasetManifest) -> Result<u32, DataError> {
    let r = manifest.config.resolution;
    match manifest.entries.iter().find(|e| e.resolution != r) {
        Some(e) => Err(DataError::InvalidArgument(format!(
            "entry {} has resolution {}, manifest {r}",
            e.source.display(),
            e.resolution
        ))),
        None => Ok(r),
    }
}

fn stack(resolution: u32, images: Vec<RgbImage>) -> Result<ImageSet, DataError> {
    let mut data = Vec::with_capacity(images.len() * 3 * (resolution * resolution) as usize);
    for img in &images {
        data.extend(normalize_image(img).into_data());
    }
    ImageSet::new(resolution as usize, data).map_err(|e| DataError::InvalidArgument(e.to_string()))
}

/// Processes every entry from its source and stacks the normalized images in
/// manifest order.
pub fn load_image_set(manifest: &DatasetManifest, source_root: &Path) -> Result<ImageSet, DataError> {
    let r = uniform_resolution(manifest)?;
    let images = manifest
        .entries
        .par_iter()
        .map(|e| process_entry(e, source_root))
        .collect::<Result<Vec<_>, _>>()?;
    stack(r, images)
}

/// Processed images as PNG files at `<root>/<id[..2]>/<id>-<flip>.png`.
#[derive(Debug, Clone)]
pub struct ProcessedStore {
    root: PathBuf,
}

impl ProcessedStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, entry: &ManifestEntry) -> PathBuf {
        let id = entry.id();
        self.root.join(&id[..2]).join(format!("{id}-{}.png", u8::from(entry.flip)))
    }

    /// Writes missing entries; existing files are trusted since their names
    /// are content ids.
    pub fn materialize(&self, manifest: &DatasetManifest, source_root: &Path) -> Result<usize, DataError> {
        let written = manifest
            .entries
            .par_iter()
            .map(|e| {
                let path = self.path_for(e);
                if path.is_file() {
                    return Ok(0);
                }
                let bytes = encode_png(&process_entry(e, source_root)?);
                let dir = path.parent().expect("store paths have a parent");
                std::fs::create_dir_all(dir).map_err(|err| DataError::io(dir, err))?;
                let tmp = path.with_extension("partial");
                std::fs::write(&tmp, bytes).map_err(|err| DataError::io(&tmp, err))?;
                std::fs::rename(&tmp, &path).map_err(|err| DataError::io(&path, err))?;
                Ok(1)
            })
            .collect::<Result<Vec<usize>, DataError>>()?;
        Ok(written.into_iter().sum())
    }

    pub fn load(&self, manifest: &DatasetManifest) -> Result<ImageSet, DataError> {
        let r = uniform_resolution(manifest)?;
        let images = manifest
            .entries
            .par_iter()
            .map(|e| {
                let img = decode(&self.path_for(e))?;
                if img.dimensions() != (r, r) {
                    return Err(DataError::DimensionMismatch {
                        path: self.path_for(e),
                        expected: (r, r),
                        actual: img.dimensions(),
                    });
                }
                Ok(img)
            })
            .collect::<Result<Vec<_>, _>>()?;
        stack(r, images)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::write_shape_corpus;
    use crate::data::{build_manifest, ManifestConfig};

    #[test]
    fn store_matches_direct_processing() {
        let src = tempfile::tempdir().unwrap();
        let records = write_shape_corpus(src.path(), 4, 260, 7).unwrap();
        let config = ManifestConfig {
            resolution: 32,
            ..Default::default()
        };
        let m = build_manifest(&records, config).unwrap().manifest;
        let direct = load_image_set(&m, src.path()).unwrap();
        assert_eq!(direct.len(), 8);

        let store_dir = tempfile::tempdir().unwrap();
        let store = ProcessedStore::new(store_dir.path());
        assert_eq!(store.materialize(&m, src.path()).unwrap(), 8);
        assert_eq!(store.materialize(&m, src.path()).unwrap(), 0);
        assert_eq!(store.load(&m).unwrap(), direct);
        // mirrored pairs
        let a = direct.image(0);
        let b = direct.image(1);
        assert_eq!(a[31], b[0]);
    }

    #[test]
    fn missing_source_is_an_io_error() {
        let m = build_manifest(
            &[crate::data::RawImageRecord {
                path: "nope.png".into(),
                width: 300,
                height: 300,
                species: crate::data::Species::Cat,
                bbox: None,
                contains_human: false,
            }],
            ManifestConfig::default(),
        )
        .unwrap()
        .manifest;
        assert!(matches!(load_image_set(&m, Path::new("/nonexistent")), Err(DataError::Io { .. })));
    }
}
