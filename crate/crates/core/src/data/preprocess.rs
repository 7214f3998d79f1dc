use std::path::{Path, PathBuf};

use image::RgbImage;

use super::DataError;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// A decoded, resized, and normalized image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    /// Shape `(1, R, R, 3)`, values in `[-1, 1]`.
    pub pixels: Tensor<f32>,
    pub path: PathBuf,
}

/// Decodes JPEG or PNG bytes to 8-bit RGB.
pub fn decode_image(bytes: &[u8]) -> Result<RgbImage, DataError> {
    let img = image::load_from_memory(bytes).map_err(|e| DataError::Decode(e.to_string()))?;
    let rgb = img.to_rgb8();
    if rgb.width() == 0 || rgb.height() == 0 {
        return Err(DataError::EmptyImage);
    }
    Ok(rgb)
}

/// `(1, H, W, 3)` tensor with channel values scaled to `[0, 1]`.
pub fn rgb_to_tensor(img: &RgbImage) -> Tensor<f32> {
    let shape = Shape::new(1, img.height() as usize, img.width() as usize, 3);
    let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    Tensor::from_vec(shape, data).expect("RGB buffer matches its dimensions")
}

/// Bilinear resampling with half-pixel centers and edge clamping.
///
/// Source coordinate for output index `o` is `(o + 0.5) · in/out − 0.5`. Resizing to the
/// same extent returns the input unchanged.
pub fn resize_bilinear<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let s = input.shape();
    if s.height == out_h && s.width == out_w {
        return input.clone();
    }
    let taps = |in_len: usize, out_len: usize| -> Vec<(usize, usize, T)> {
        let scale = in_len as f64 / out_len as f64;
        (0..out_len)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(in_len - 1);
                (i0, i1, T::from_f64_lossy(src - i0 as f64))
            })
            .collect()
    };
    let ys = taps(s.height, out_h);
    let xs = taps(s.width, out_w);
    let one = T::one();
    Tensor::from_fn(Shape::new(s.batch, out_h, out_w, s.channels), |b, y, x, c| {
        let (y0, y1, fy) = ys[y];
        let (x0, x1, fx) = xs[x];
        let top = input.get(b, y0, x0, c) * (one - fx) + input.get(b, y0, x1, c) * fx;
        let bottom = input.get(b, y1, x0, c) * (one - fx) + input.get(b, y1, x1, c) * fx;
        top * (one - fy) + bottom * fy
    })
    .expect("output shape fits")
}

/// Maps `[0, 1]` to `[-1, 1]` via `x · 2 − 1`.
pub fn to_signed_unit<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let two = T::from_f64_lossy(2.0);
    t.map(|v| v * two - T::one())
}

/// Resize to `target × target`, then normalize to `[-1, 1]`.
pub fn preprocess_rgb(img: &RgbImage, target: usize) -> Tensor<f32> {
    to_signed_unit(&resize_bilinear(&rgb_to_tensor(img), target, target))
}

/// Decode and preprocess an encoded image. Shared by the trainer and the HTTP service.
pub fn preprocess_bytes(bytes: &[u8], target: usize) -> Result<Tensor<f32>, DataError> {
    Ok(preprocess_rgb(&decode_image(bytes)?, target))
}

pub fn load_and_preprocess(path: impl AsRef<Path>, target: usize) -> Result<ImageRecord, DataError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| DataError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let pixels = preprocess_bytes(&bytes, target).map_err(|e| match e {
        DataError::Decode(msg) => DataError::Decode(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    Ok(ImageRecord {
        pixels,
        path: path.to_path_buf(),
    })
}
