//! Conversions between normalized CHW tensors and 8-bit RGB images.

use std::io::Cursor;

use image::{ImageFormat, RgbImage};

use crate::tensor::Tensor;

/// Rounds half away from zero and saturates to a byte.
pub fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Maps one 3×H×W image in [−1, 1] to bytes via (v + 1) · 127.5.
pub fn chw_to_rgb(data: &[f64], h: usize, w: usize) -> RgbImage {
    assert_eq!(data.len(), 3 * h * w, "expected a 3×{h}×{w} image");
    let plane = h * w;
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        image::Rgb([0, 1, 2].map(|c| quantize((data[c * plane + i] + 1.0) * 127.5)))
    })
}

/// Image `i` of an N×3×H×W batch.
pub fn batch_image(batch: &Tensor, i: usize) -> RgbImage {
    let [_, _, h, w] = batch.shape() else {
        panic!("expected an N×3×H×W batch, got {:?}", batch.shape())
    };
    let len = 3 * h * w;
    chw_to_rgb(&batch.data()[i * len..(i + 1) * len], *h, *w)
}

/// Tiles a batch row-major into a near-square grid with a 2-pixel gutter.
pub fn grid(batch: &Tensor) -> RgbImage {
    let [n, _, h, w] = batch.shape() else {
        panic!("expected an N×3×H×W batch, got {:?}", batch.shape())
    };
    let (n, h, w) = (*n as u32, *h as u32, *w as u32);
    let cols = (n as f64).sqrt().ceil().max(1.0) as u32;
    let rows = n.div_ceil(cols);
    const GAP: u32 = 2;
    let mut out = RgbImage::new(cols * (w + GAP) + GAP, rows * (h + GAP) + GAP);
    for i in 0..n {
        let tile = batch_image(batch, i as usize);
        let (ox, oy) = (GAP + (i % cols) * (w + GAP), GAP + (i / cols) * (h + GAP));
        image::imageops::replace(&mut out, &tile, ox as i64, oy as i64);
    }
    out
}

pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .expect("PNG encoding into memory cannot fail");
    buf.into_inner()
}
