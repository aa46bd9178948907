use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::BBox;

/// Square region with top-left corner (x, y); covers [x, x+side) × [y, y+side).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: u32,
    pub y: u32,
    pub side: u32,
}

/// Start of a `side`-long window centered on `center2 / 2`, shifted the
/// least distance needed to fit in [0, extent). Rounds ties down.
fn place(center2: u64, side: u32, extent: u32) -> u32 {
    let start = (center2.saturating_sub(side as u64)) / 2;
    start.min((extent - side) as u64) as u32
}

/// Square crop geometry: side max(bw, bh) capped at the short image side,
/// centered on the box and clamped inside; centered on the image without a
/// box.
pub fn square_crop_rect(width: u32, height: u32, bbox: Option<BBox>) -> CropRect {
    let short = width.min(height);
    match bbox {
        None => CropRect {
            x: (width - short) / 2,
            y: (height - short) / 2,
            side: short,
        },
        Some(b) => {
            let side = b.w.max(b.h).min(short);
            // doubled centers keep half-pixel positions exact
            let cx2 = 2 * b.x as u64 + b.w as u64;
            let cy2 = 2 * b.y as u64 + b.h as u64;
            CropRect {
                x: place(cx2, side, width),
                y: place(cy2, side, height),
                side,
            }
        }
    }
}

pub fn square_crop(image: &RgbImage, bbox: Option<BBox>) -> (RgbImage, CropRect) {
    let r = square_crop_rect(image.width(), image.height(), bbox);
    let out = image::imageops::crop_imm(image, r.x, r.y, r.side, r.side).to_image();
    (out, r)
}
