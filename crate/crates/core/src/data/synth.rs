//! Synthetic banknote-like images.
//!
//! Each class has a dominant hue, spaced evenly around the color wheel, and carries its
//! denomination drawn as seven-segment digits. Per-image jitter (hue, saturation,
//! brightness gradient, glyph position, pixel noise) keeps samples distinct while the
//! mean color stays class-specific.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageFormat, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::DataError;

pub const MAX_CLASSES: usize = 8;

/// Class labels in generation order.
const DENOMINATIONS: [&str; MAX_CLASSES] = ["100", "250", "500", "1000", "50", "200", "2000", "5000"];

const HUE_OFFSET: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub resolution: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 4,
            per_class: 400,
            resolution: 224,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthSummary {
    pub labels: Vec<String>,
    pub files: Vec<PathBuf>,
}

pub fn synth_labels(classes: usize) -> Vec<String> {
    DENOMINATIONS[..classes.min(MAX_CLASSES)]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// Base hue in degrees for class `index` of `classes`.
pub fn class_hue(index: usize, classes: usize) -> f64 {
    (HUE_OFFSET + index as f64 * 360.0 / classes as f64).rem_euclid(360.0)
}

/// HSV (degrees, [0,1], [0,1]) to RGB in [0,1].
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Hue in degrees of an RGB color in [0,1]; `None` for grays.
pub fn rgb_hue(rgb: [f64; 3]) -> Option<f64> {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    if d <= 1e-12 {
        return None;
    }
    let h = if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    Some(h * 60.0)
}

/// Segments a..g of a seven-segment display for each digit.
const SEGMENTS: [[bool; 7]; 10] = [
    [true, true, true, true, true, true, false],
    [false, true, true, false, false, false, false],
    [true, true, false, true, true, false, true],
    [true, true, true, true, false, false, true],
    [false, true, true, false, false, true, true],
    [true, false, true, true, false, true, true],
    [true, false, true, true, true, true, true],
    [true, true, true, false, false, false, false],
    [true, true, true, true, true, true, true],
    [true, true, true, true, false, true, true],
];

/// True if `(x, y)` (relative to a digit cell of `w × h`) lies on a lit segment.
fn on_segment(digit: usize, x: f64, y: f64, w: f64, h: f64) -> bool {
    let t = (w * 0.18).max(1.0);
    let seg = SEGMENTS[digit];
    let horiz = |cy: f64| x >= 0.0 && x < w && (y - cy).abs() < t / 2.0;
    let left = x >= 0.0 && x < t;
    let right = x >= w - t && x < w;
    let upper = y >= 0.0 && y < h / 2.0;
    let lower = y >= h / 2.0 && y < h;
    (seg[0] && horiz(t / 2.0))
        || (seg[1] && right && upper)
        || (seg[2] && right && lower)
        || (seg[3] && horiz(h - t / 2.0))
        || (seg[4] && left && lower)
        || (seg[5] && left && upper)
        || (seg[6] && horiz(h / 2.0))
}

/// Renders image `index` of class `class` deterministically.
pub fn render_sample(class: usize, classes: usize, index: usize, resolution: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((class as u64) << 32) | index as u64);

    let hue = class_hue(class, classes) + rng.random_range(-8.0..8.0);
    let sat = rng.random_range(0.55..0.85);
    let val = rng.random_range(0.6..0.85);
    let gradient = rng.random_range(-0.08..0.08);
    let margin = (resolution as f64 * rng.random_range(0.04..0.08)).round();
    let label = DENOMINATIONS[class % MAX_CLASSES];
    let digits: Vec<usize> = label.bytes().map(|b| (b - b'0') as usize).collect();

    let res = resolution as f64;
    let cell_h = res * 0.34;
    let cell_w = cell_h * 0.5;
    let gap = cell_w * 0.3;
    let text_w = digits.len() as f64 * cell_w + (digits.len() - 1) as f64 * gap;
    let origin_x = (res - text_w) / 2.0 + res * rng.random_range(-0.06..0.06);
    let origin_y = (res - cell_h) / 2.0 + res * rng.random_range(-0.1..0.1);

    let ink = hsv_to_rgb(hue, sat * 0.2, 0.97);
    let mut noise = ChaCha8Rng::seed_from_u64(rng.random());
    RgbImage::from_fn(resolution as u32, resolution as u32, |px, py| {
        let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
        let in_border = x < margin || y < margin || x > res - margin || y > res - margin;
        let shade = val * (1.0 + gradient * (x / res - 0.5) * 2.0) * if in_border { 0.7 } else { 1.0 };
        let mut color = hsv_to_rgb(hue, sat, shade.clamp(0.0, 1.0));
        let rel_x = x - origin_x;
        let rel_y = y - origin_y;
        if rel_x >= 0.0 && rel_y >= 0.0 && rel_y < cell_h {
            let slot = (rel_x / (cell_w + gap)) as usize;
            let within = rel_x - slot as f64 * (cell_w + gap);
            if slot < digits.len() && on_segment(digits[slot], within, rel_y, cell_w, cell_h) {
                color = ink;
            }
        }
        let jitter: f64 = noise.random_range(-0.03..0.03);
        Rgb(color.map(|c| ((c + jitter).clamp(0.0, 1.0) * 255.0).round() as u8))
    })
}

pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .expect("PNG encoding into memory");
    buf.into_inner()
}

/// Writes `classes` directories of `per_class` PNGs under `root`.
pub fn generate_synthetic_dataset(root: impl AsRef<Path>, cfg: &SynthConfig) -> Result<SynthSummary, DataError> {
    if cfg.classes == 0 || cfg.classes > MAX_CLASSES {
        return Err(DataError::InvalidSynth(format!(
            "class count must be in 1..={MAX_CLASSES}, got {}",
            cfg.classes
        )));
    }
    if cfg.per_class == 0 || cfg.resolution < 8 {
        return Err(DataError::InvalidSynth(format!(
            "need at least one image per class and resolution ≥ 8 (got {} and {})",
            cfg.per_class, cfg.resolution
        )));
    }
    let root = root.as_ref();
    let labels = synth_labels(cfg.classes);
    let mut files = Vec::with_capacity(cfg.classes * cfg.per_class);
    for (class, label) in labels.iter().enumerate() {
        let dir = root.join(label);
        fs::create_dir_all(&dir).map_err(|e| DataError::Io {
            path: dir.clone(),
            source: e,
        })?;
        for index in 0..cfg.per_class {
            let img = render_sample(class, cfg.classes, index, cfg.resolution, cfg.seed);
            let path = dir.join(format!("{label}_{index:04}.png"));
            fs::write(&path, encode_png(&img)).map_err(|e| DataError::Io {
                path: path.clone(),
                source: e,
            })?;
            files.push(path);
        }
    }
    Ok(SynthSummary { labels, files })
}
