//! Two-class shape corpus standing in for pet photographs: dogs are filled
//! discs, cats filled squares, on a dark background.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::pixels::normalize_image;
use super::{BBox, DataError, RawImageRecord, Species};
use crate::imaging::encode_png;
use crate::train::ImageSet;

/// Renders one shape covering 40–70% of the side at a random position.
pub fn render_shape<R: Rng + ?Sized>(species: Species, size: u32, rng: &mut R) -> (RgbImage, BBox) {
    let bg = Rgb([rng.random_range(10..60), rng.random_range(10..60), rng.random_range(10..60)]);
    let fg = Rgb([rng.random_range(160..=255), rng.random_range(160..=255), rng.random_range(160..=255)]);
    let extent = ((size as f64) * rng.random_range(0.4..0.7)).round().max(2.0) as u32;
    let x0 = rng.random_range(0..=size - extent);
    let y0 = rng.random_range(0..=size - extent);
    let r = extent as f64 / 2.0;
    let (cx, cy) = (x0 as f64 + r, y0 as f64 + r);
    let img = RgbImage::from_fn(size, size, |x, y| {
        let inside = match species {
            Species::Cat => x >= x0 && x < x0 + extent && y >= y0 && y < y0 + extent,
            Species::Dog => {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                dx * dx + dy * dy <= r * r
            }
        };
        if inside {
            fg
        } else {
            bg
        }
    });
    (
        img,
        BBox {
            x: x0,
            y: y0,
            w: extent,
            h: extent,
        },
    )
}

fn species_for(i: usize) -> Species {
    if i % 2 == 0 {
        Species::Dog
    } else {
        Species::Cat
    }
}

/// Writes `n` alternating dog/cat PNGs of side `size` into `dir` and returns
/// their records, with paths relative to `dir`.
pub fn write_shape_corpus(dir: &Path, n: usize, size: u32, seed: u64) -> Result<Vec<RawImageRecord>, DataError> {
    std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let species = species_for(i);
        let (img, bbox) = render_shape(species, size, &mut rng);
        let name = format!("{}-{i:04}.png", if species == Species::Dog { "dog" } else { "cat" });
        let path = dir.join(&name);
        std::fs::write(&path, encode_png(&img)).map_err(|e| DataError::io(&path, e))?;
        records.push(RawImageRecord {
            path: name.into(),
            width: size,
            height: size,
            species,
            bbox: Some(bbox),
            contains_human: false,
        });
    }
    Ok(records)
}

/// In-memory corpus rendered directly at `resolution`, with class labels
/// (dog 0, cat 1).
pub fn shape_image_set(n: usize, resolution: u32, seed: u64) -> (ImageSet, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::new();
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let species = species_for(i);
        let (img, _) = render_shape(species, resolution, &mut rng);
        data.extend(normalize_image(&img).into_data());
        labels.push(species.index());
    }
    let set = ImageSet::new(resolution as usize, data).expect("whole images");
    (set, labels)
}
