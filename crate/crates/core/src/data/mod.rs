//! Dataset ingestion, deterministic train/test splitting, image preprocessing, and a
//! synthetic dataset generator.

mod manifest;
mod preprocess;
mod synth;

use std::path::PathBuf;

use thiserror::Error;

pub use manifest::{
    scan_dataset, split_manifest, DatasetManifest, ManifestEntry, Split, SplitPolicy,
    STANDARD_CLASS_SIZE, STANDARD_TEST_COUNT, STANDARD_TEST_FRACTION,
};
pub use preprocess::{
    decode_image, load_and_preprocess, preprocess_bytes, preprocess_rgb, resize_bilinear,
    rgb_to_tensor, to_signed_unit, ImageRecord,
};
pub use synth::{
    class_hue, encode_png, generate_synthetic_dataset, hsv_to_rgb, render_sample, rgb_hue,
    synth_labels, SynthConfig, SynthSummary, MAX_CLASSES,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("no classes found under {}", .0.display())]
    NoClasses(PathBuf),
    #[error("class '{0}' contains no images")]
    EmptyClass(String),
    #[error("invalid split policy: {0}")]
    InvalidPolicy(String),
    #[error("class '{label}' has {available} images, cannot hold out {test} for testing")]
    TestCountTooLarge {
        label: String,
        test: usize,
        available: usize,
    },
    #[error("entry label '{0}' is not a manifest class")]
    UnknownLabel(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error("image has a zero dimension")]
    EmptyImage,
    #[error("invalid synthetic dataset request: {0}")]
    InvalidSynth(String),
}
