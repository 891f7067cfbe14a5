//! PNG and TIFF reading, PNG writing.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::ops::LabelMap;
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

/// Reads an 8- or 16-bit grayscale or RGB image as `(1, c, h, w)` with
/// values divided by the type maximum. Alpha channels are dropped.
pub fn load_image<T: Real>(path: &Path) -> Result<Tensor<T>> {
    let input_err = |message: String| Error::Input { path: path.to_owned(), message };
    let img = image::ImageReader::open(path)
        .map_err(|e| input_err(e.to_string()))?
        .with_guessed_format()
        .map_err(|e| input_err(e.to_string()))?
        .decode()
        .map_err(|e| input_err(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, values): (usize, Vec<f64>) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect()),
        DynamicImage::ImageLumaA8(_) => (1, img.to_luma8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect()),
        DynamicImage::ImageRgb8(b) => (3, b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect()),
        DynamicImage::ImageRgba8(_) => (3, img.to_rgb8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect()),
        DynamicImage::ImageLuma16(b) => (1, b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()),
        DynamicImage::ImageLumaA16(_) => {
            (1, img.to_luma16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect())
        }
        DynamicImage::ImageRgb16(b) => (3, b.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect()),
        DynamicImage::ImageRgba16(_) => {
            (3, img.to_rgb16().into_raw().into_iter().map(|v| v as f64 / 65535.0).collect())
        }
        other => return Err(input_err(format!("unsupported pixel type {:?}", other.color()))),
    };
    let shape = Shape::new(1, channels, h, w).map_err(|e| input_err(e.to_string()))?;
    // Interleaved HWC to planar CHW.
    Ok(Tensor::from_fn(shape, |_, c, i, j| T::from_f64_lossy(values[(i * w + j) * channels + c])))
}

fn save_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Input { path: path.to_owned(), message: e.to_string() }
}

fn single_plane<T: Real>(t: &Tensor<T>) -> Result<(u32, u32)> {
    let s = t.shape();
    if s.n != 1 || s.c != 1 {
        return Err(Error::shape(format!("expected a single-plane image, got {s}")));
    }
    Ok((s.w as u32, s.h as u32))
}

/// Writes a `(1, 1, h, w)` tensor as 16-bit grayscale, clamping to `[0, 1]`.
pub fn save_gray16<T: Real>(path: &Path, t: &Tensor<T>) -> Result<()> {
    let (w, h) = single_plane(t)?;
    let raw: Vec<u16> = t.data().iter().map(|v| (v.to_f64_lossy().clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
    ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw).expect("buffer size").save(path).map_err(|e| save_err(path, e))
}

/// Writes a `(1, 1, h, w)` tensor as 8-bit grayscale, clamping to `[0, 1]`.
pub fn save_gray8<T: Real>(path: &Path, t: &Tensor<T>) -> Result<()> {
    let (w, h) = single_plane(t)?;
    let raw: Vec<u8> = t.data().iter().map(|v| (v.to_f64_lossy().clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw).expect("buffer size").save(path).map_err(|e| save_err(path, e))
}

/// Writes class indices as 8-bit gray, multiplied by `scale`.
pub fn save_labels(path: &Path, labels: &LabelMap, scale: u8) -> Result<()> {
    if labels.n != 1 {
        return Err(Error::shape("label image must hold one map"));
    }
    let raw = labels
        .data
        .iter()
        .map(|&l| u8::try_from(l).ok().and_then(|l| l.checked_mul(scale)))
        .collect::<Option<Vec<u8>>>()
        .ok_or_else(|| Error::data("label value does not fit in 8 bits"))?;
    ImageBuffer::<Luma<u8>, _>::from_raw(labels.w as u32, labels.h as u32, raw)
        .expect("buffer size")
        .save(path)
        .map_err(|e| save_err(path, e))
}

/// Reads an 8-bit label image written by [`save_labels`] with scale 1.
pub fn load_labels(path: &Path) -> Result<LabelMap> {
    let img = image::open(path).map_err(|e| save_err(path, e))?;
    let gray = match img {
        DynamicImage::ImageLuma8(b) => b,
        other => return Err(save_err(path, format!("label image must be 8-bit gray, got {:?}", other.color()))),
    };
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    LabelMap::new(1, h, w, gray.into_raw().into_iter().map(u32::from).collect())
}
