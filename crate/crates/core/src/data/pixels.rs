use image::RgbImage;

use super::DataError;
use crate::imaging::quantize;
use crate::tensor::Tensor;

/// Bilinear resize of a square image with half-pixel centers and edge
/// clamping, quantized by rounding half away from zero.
pub fn resize(image: &RgbImage, target: u32) -> Result<RgbImage, DataError> {
    let (w, h) = image.dimensions();
    if w != h {
        return Err(DataError::NonSquare { width: w, height: h });
    }
    if w == 0 || target == 0 {
        return Err(DataError::InvalidArgument("resize needs nonzero extents".into()));
    }
    if w == target {
        return Ok(image.clone());
    }
    let scale = w as f64 / target as f64;
    let last = (w - 1) as f64;
    // per output coordinate: (low index, high index, weight of high)
    let taps: Vec<(u32, u32, f64)> = (0..target)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let lo = src.floor();
            let hi = (lo + 1.0).min(last);
            (lo as u32, hi as u32, src - lo)
        })
        .collect();
    Ok(RgbImage::from_fn(target, target, |x, y| {
        let (x0, x1, fx) = taps[x as usize];
        let (y0, y1, fy) = taps[y as usize];
        let p = |xx, yy| image.get_pixel(xx, yy).0;
        let (a, b, c, d) = (p(x0, y0), p(x1, y0), p(x0, y1), p(x1, y1));
        image::Rgb(std::array::from_fn(|ch| {
            let top = a[ch] as f64 * (1.0 - fx) + b[ch] as f64 * fx;
            let bottom = c[ch] as f64 * (1.0 - fx) + d[ch] as f64 * fx;
            quantize(top * (1.0 - fy) + bottom * fy)
        }))
    }))
}

/// Mirror about the vertical axis.
pub fn flip_horizontal(image: &RgbImage) -> RgbImage {
    image::imageops::flip_horizontal(image)
}

pub fn normalize(v: u8) -> f64 {
    v as f64 / 127.5 - 1.0
}

/// Inverse of [`normalize`] followed by byte quantization.
pub fn denormalize(v: f64) -> u8 {
    quantize((v + 1.0) * 127.5)
}

/// 3×H×W tensor in [−1, 1].
pub fn normalize_image(image: &RgbImage) -> Tensor {
    let (w, h) = image.dimensions();
    let plane = (w * h) as usize;
    let mut data = vec![0.0; 3 * plane];
    for (i, p) in image.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = normalize(p.0[c]);
        }
    }
    Tensor::new([3, h as usize, w as usize], data).expect("non-empty image")
}
