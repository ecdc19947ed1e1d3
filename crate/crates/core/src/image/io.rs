//! PNG (8-bit) and TIFF (8/16-bit) image I/O.
//!
//! 16-bit samples are normalized to `[0, 1]` by dividing by 65535. Images are
//! always loaded in unit range; alpha channels are dropped.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use ndarray::Array3;

use super::{convert_range, ImageTensor, ValueRange};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn load_image<F: Scalar, P: AsRef<Path>>(path: P) -> Result<ImageTensor<F>> {
    let dynimg = image::open(path.as_ref())?;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let data = match dynimg {
        DynamicImage::ImageLuma8(buf) => {
            from_samples::<F>(h, w, 1, buf.as_raw().iter().map(|&v| v as f64 / 255.0))
        }
        DynamicImage::ImageLuma16(buf) => {
            from_samples::<F>(h, w, 1, buf.as_raw().iter().map(|&v| v as f64 / 65535.0))
        }
        DynamicImage::ImageRgb8(buf) => {
            from_samples::<F>(h, w, 3, buf.as_raw().iter().map(|&v| v as f64 / 255.0))
        }
        DynamicImage::ImageRgb16(buf) => {
            from_samples::<F>(h, w, 3, buf.as_raw().iter().map(|&v| v as f64 / 65535.0))
        }
        other => {
            // Covers alpha and palette variants.
            let buf = other.to_rgb8();
            from_samples::<F>(h, w, 3, buf.as_raw().iter().map(|&v| v as f64 / 255.0))
        }
    };
    ImageTensor::new(data, ValueRange::Unit)
}

fn from_samples<F: Scalar>(
    h: usize,
    w: usize,
    c: usize,
    samples: impl Iterator<Item = f64>,
) -> Array3<F> {
    let v: Vec<F> = samples.map(F::of_f64).collect();
    Array3::from_shape_vec((h, w, c), v).expect("sample count matches shape")
}

/// Saves an image; format and bit depth follow the file extension
/// (`.png` → 8-bit, `.tif`/`.tiff` → 16-bit). Symmetric-range images are
/// converted to unit range first.
pub fn save_image<F: Scalar, P: AsRef<Path>>(img: &ImageTensor<F>, path: P) -> Result<()> {
    let path = path.as_ref();
    let unit = convert_range(img, ValueRange::Unit);
    let (h, w, c) = (unit.height(), unit.width(), unit.channels());
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match ext.as_str() {
        "png" => {
            let quant = |v: F| (v.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8;
            if c == 1 {
                let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                    Luma([quant(unit.data()[[y as usize, x as usize, 0]])])
                });
                buf.save(path)?;
            } else {
                let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                    let px = |ch| quant(unit.data()[[y as usize, x as usize, ch]]);
                    Rgb([px(0), px(1), px(2)])
                });
                buf.save(path)?;
            }
        }
        "tif" | "tiff" => {
            let quant = |v: F| (v.as_f64() * 65535.0).round().clamp(0.0, 65535.0) as u16;
            if c == 1 {
                let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                    Luma([quant(unit.data()[[y as usize, x as usize, 0]])])
                });
                buf.save(path)?;
            } else {
                let buf: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
                    let px = |ch| quant(unit.data()[[y as usize, x as usize, ch]]);
                    Rgb([px(0), px(1), px(2)])
                });
                buf.save(path)?;
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unsupported image extension `{other}` (use png, tif or tiff)"
            )))
        }
    }
    Ok(())
}
