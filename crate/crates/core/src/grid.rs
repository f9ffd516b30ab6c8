//! Image grids written as PNG.

use std::path::Path;

use adgan_tensor::{Real, Tensor};
use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};

/// Separator and empty-cell colour.
pub const GAP_VALUE: u8 = 255;

/// Maps `[-1, 1]` linearly onto `0..=255`, clamping outside values.
pub fn to_u8<T: Real>(v: T) -> u8 {
    ((v.as_f64() + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Canvas `(width, height, rgb bytes)` of `images` laid out row-major in
/// `cols` columns with `gap` separator pixels between cells.
pub fn compose<T: Real>(images: &[&Tensor<T>], cols: usize, gap: usize) -> Result<(usize, usize, Vec<u8>)> {
    let first = images
        .first()
        .ok_or_else(|| Error::Grid("no images to lay out".into()))?;
    if cols == 0 {
        return Err(Error::Grid("grid needs at least one column".into()));
    }
    let (h, w) = match *first.shape() {
        [3, h, w] => (h, w),
        ref s => return Err(Error::Grid(format!("images must be [3, H, W], got {s:?}"))),
    };
    if let Some(bad) = images.iter().find(|t| t.shape() != first.shape()) {
        return Err(Error::Grid(format!(
            "image shape {:?} differs from {:?}",
            bad.shape(),
            first.shape()
        )));
    }
    let cols = cols.min(images.len());
    let rows = images.len().div_ceil(cols);
    let width = cols * w + (cols - 1) * gap;
    let height = rows * h + (rows - 1) * gap;
    let mut buf = vec![GAP_VALUE; width * height * 3];
    let plane = h * w;
    for (k, img) in images.iter().enumerate() {
        let (r, c) = (k / cols, k % cols);
        let (x0, y0) = (c * (w + gap), r * (h + gap));
        let d = img.data();
        for y in 0..h {
            for x in 0..w {
                let o = ((y0 + y) * width + x0 + x) * 3;
                for ch in 0..3 {
                    buf[o + ch] = to_u8(d[ch * plane + y * w + x]);
                }
            }
        }
    }
    Ok((width, height, buf))
}

/// Writes the composed grid as an 8-bit RGB PNG and returns its
/// `(width, height)`.
pub fn grid_emit<T: Real>(images: &[&Tensor<T>], cols: usize, gap: usize, path: &Path) -> Result<(usize, usize)> {
    let (width, height, buf) = compose(images, cols, gap)?;
    let mut bytes = Vec::new();
    PngEncoder::new(&mut bytes)
        .write_image(&buf, width as u32, height as u32, ExtendedColorType::Rgb8)
        .map_err(|e| Error::Grid(e.to_string()))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok((width, height))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_mapping_endpoints() {
        assert_eq!(to_u8(-1.0f32), 0);
        assert_eq!(to_u8(1.0f32), 255);
        assert_eq!(to_u8(0.0f64), 128);
        assert_eq!(to_u8(-3.0f64), 0);
        assert_eq!(to_u8(9.0f64), 255);
    }

    #[test]
    fn layout_arithmetic() {
        let img = Tensor::<f32>::zeros(vec![3, 32, 32]);
        let imgs = vec![&img; 6];
        let (w, h, buf) = compose(&imgs, 3, 2).unwrap();
        assert_eq!((w, h), (3 * 32 + 2 * 2, 2 * 32 + 2));
        assert_eq!(buf.len(), w * h * 3);
        // separator column between the first two cells
        assert_eq!(buf[(5 * w + 32) * 3], GAP_VALUE);
        assert_eq!(buf[(5 * w + 31) * 3], 128);
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let a = Tensor::<f32>::zeros(vec![3, 4, 4]);
        let b = Tensor::<f32>::zeros(vec![3, 4, 5]);
        assert!(compose(&[&a, &b], 2, 1).is_err());
        assert!(compose::<f32>(&[], 2, 1).is_err());
    }
}
