//! Versioned model bundle file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "YCDM"
//! 4       4     u32 format version
//! 8       8     u64 header length H
//! 16      H     UTF-8 JSON header
//! 16+H    ...   f32 tensor blobs, concatenated in header order
//! ```
//!
//! The header carries the labels, architecture, initialization seed, and one
//! `{name, shape, offset, length}` record per tensor (offset in bytes from the start of
//! the blob section, length in elements). Backbone tensors come first in layer order,
//! followed by the head weights `(1, 1, E, K)` and bias `(1, 1, 1, K)`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{check_weight_shapes, init_backbone, ArchSpec, ModelError};
use crate::nnops::Dense;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"YCDM";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 16;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("bad magic: not a model bundle")]
    BadMagic,
    #[error("unsupported bundle version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("truncated bundle: {0}")]
    Truncated(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("invalid model: {0}")]
    Model(#[from] ModelError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl BundleError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            BundleError::BadMagic => "bad_magic",
            BundleError::UnsupportedVersion(_) => "unsupported_version",
            BundleError::Truncated(_) => "truncated",
            BundleError::ShapeMismatch(_) => "shape_mismatch",
            BundleError::MalformedHeader(_) => "malformed_header",
            BundleError::Model(_) => "invalid_model",
            BundleError::Io(_) => "io",
        }
    }
}

/// Labels, architecture, and weights of a trained classifier.
///
/// Immutable once built; every constructor checks that weight shapes match the
/// architecture and that the head has one output per label.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    format_version: u32,
    labels: Vec<String>,
    arch: ArchSpec,
    backbone: Vec<Tensor<f32>>,
    head: Dense<f32>,
    init_seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    labels: Vec<String>,
    arch: ArchSpec,
    init_seed: u64,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 4],
    offset: u64,
    length: u64,
}

impl ModelBundle {
    pub fn new(
        labels: Vec<String>,
        arch: ArchSpec,
        backbone: Vec<Tensor<f32>>,
        head: Dense<f32>,
        init_seed: u64,
    ) -> Result<Self, ModelError> {
        arch.validate()?;
        check_weight_shapes(arch.backbone_layers(), &backbone)?;
        if head.out_dim() != labels.len() || labels.is_empty() {
            return Err(ModelError::LabelMismatch {
                labels: labels.len(),
                head: head.out_dim(),
            });
        }
        if head.in_dim() != arch.embedding_dim {
            return Err(ModelError::HeadInput {
                head: head.in_dim(),
                embedding: arch.embedding_dim,
            });
        }
        Ok(Self {
            format_version: FORMAT_VERSION,
            labels,
            arch,
            backbone,
            head,
            init_seed,
        })
    }

    /// Fresh bundle: seeded backbone and a zero head.
    pub fn initialize(labels: Vec<String>, arch: ArchSpec, seed: u64) -> Result<Self, ModelError> {
        let backbone = init_backbone(&arch, seed);
        let head = Dense::zeros(arch.embedding_dim, labels.len());
        Self::new(labels, arch, backbone, head, seed)
    }

    pub fn with_head(&self, head: Dense<f32>) -> Result<Self, ModelError> {
        self.with_labels_and_head(self.labels.clone(), head)
    }

    pub fn with_labels_and_head(&self, labels: Vec<String>, head: Dense<f32>) -> Result<Self, ModelError> {
        Self::new(labels, self.arch.clone(), self.backbone.clone(), head, self.init_seed)
    }

    pub fn format_version(&self) -> u32 {
        self.format_version
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn backbone(&self) -> &[Tensor<f32>] {
        &self.backbone
    }

    pub fn head(&self) -> &Dense<f32> {
        &self.head
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    /// Equality down to the bit patterns of every float.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        self.format_version == other.format_version
            && self.labels == other.labels
            && self.arch == other.arch
            && self.init_seed == other.init_seed
            && self.backbone.len() == other.backbone.len()
            && self
                .backbone
                .iter()
                .zip(&other.backbone)
                .all(|(a, b)| a.bitwise_eq(b))
            && self.head.in_dim() == other.head.in_dim()
            && bits(self.head.weights()) == bits(other.head.weights())
            && bits(self.head.bias()) == bits(other.head.bias())
    }

    fn tensors(&self) -> Vec<(String, Shape, &[f32])> {
        let mut out: Vec<(String, Shape, &[f32])> = self
            .backbone
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("backbone.{i}"), t.shape(), t.data()))
            .collect();
        let (e, k) = (self.head.in_dim(), self.head.out_dim());
        out.push(("head.weights".into(), Shape::new(1, 1, e, k), self.head.weights()));
        out.push(("head.bias".into(), Shape::new(1, 1, 1, k), self.head.bias()));
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.tensors();
        let mut offset = 0u64;
        let entries = tensors
            .iter()
            .map(|(name, shape, data)| {
                let e = TensorEntry {
                    name: name.clone(),
                    shape: shape.dims(),
                    offset,
                    length: data.len() as u64,
                };
                offset += 4 * data.len() as u64;
                e
            })
            .collect();
        let header = Header {
            labels: self.labels.clone(),
            arch: self.arch.clone(),
            init_seed: self.init_seed,
            tensors: entries,
        };
        let header = serde_json::to_vec(&header).expect("header serializes");

        let mut out = Vec::with_capacity(PREAMBLE + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.format_version.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, _, data) in &tensors {
            for v in *data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BundleError> {
        if bytes.len() < MAGIC.len() {
            return if MAGIC.starts_with(bytes) {
                Err(BundleError::Truncated("file shorter than magic".into()))
            } else {
                Err(BundleError::BadMagic)
            };
        }
        if &bytes[..4] != MAGIC {
            return Err(BundleError::BadMagic);
        }
        if bytes.len() < PREAMBLE {
            return Err(BundleError::Truncated("incomplete preamble".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(BundleError::UnsupportedVersion(version));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|h| h.checked_add(PREAMBLE))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| {
                BundleError::Truncated(format!(
                    "header claims {header_len} bytes, file has {}",
                    bytes.len() - PREAMBLE
                ))
            })?;
        let header: Header = serde_json::from_slice(&bytes[PREAMBLE..header_end])
            .map_err(|e| BundleError::MalformedHeader(e.to_string()))?;
        header
            .arch
            .validate()
            .map_err(|e| BundleError::MalformedHeader(e.to_string()))?;

        let mut expected = header.arch.backbone_weight_shapes();
        let classes = header.labels.len();
        expected.push(Shape::new(1, 1, header.arch.embedding_dim, classes));
        expected.push(Shape::new(1, 1, 1, classes));
        if header.tensors.len() != expected.len() {
            return Err(BundleError::ShapeMismatch(format!(
                "architecture needs {} tensors, header lists {}",
                expected.len(),
                header.tensors.len()
            )));
        }
        for (entry, want) in header.tensors.iter().zip(&expected) {
            if entry.shape != want.dims() {
                return Err(BundleError::ShapeMismatch(format!(
                    "tensor {} has shape {:?}, architecture and {} labels require {}",
                    entry.name, entry.shape, classes, want
                )));
            }
            let numel = want.checked_numel().unwrap_or(usize::MAX) as u64;
            if entry.length != numel {
                return Err(BundleError::ShapeMismatch(format!(
                    "tensor {} declares {} elements, shape holds {}",
                    entry.name, entry.length, numel
                )));
            }
        }

        let blob = &bytes[header_end..];
        let mut tensors = Vec::with_capacity(expected.len());
        let mut cursor = 0u64;
        for (entry, shape) in header.tensors.iter().zip(&expected) {
            if entry.offset != cursor {
                return Err(BundleError::MalformedHeader(format!(
                    "tensor {} at offset {}, expected {}",
                    entry.name, entry.offset, cursor
                )));
            }
            let end = cursor + 4 * entry.length;
            if end > blob.len() as u64 {
                return Err(BundleError::Truncated(format!(
                    "tensor {} needs bytes {}..{}, blob has {}",
                    entry.name,
                    cursor,
                    end,
                    blob.len()
                )));
            }
            let data = blob[cursor as usize..end as usize]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            tensors.push(Tensor::from_vec(*shape, data).map_err(ModelError::from_tensor)?);
            cursor = end;
        }
        if cursor != blob.len() as u64 {
            return Err(BundleError::MalformedHeader(format!(
                "{} trailing bytes after tensor data",
                blob.len() as u64 - cursor
            )));
        }

        let bias = tensors.pop().expect("head bias").into_data();
        let weights = tensors.pop().expect("head weights").into_data();
        let head = Dense::new(header.arch.embedding_dim, classes, weights, bias)
            .map_err(ModelError::from)?;
        let bundle = ModelBundle::new(header.labels, header.arch, tensors, head, header.init_seed)?;
        Ok(bundle)
    }
}

impl ModelError {
    fn from_tensor(e: crate::tensor::TensorError) -> Self {
        ModelError::Op(e.into())
    }
}

pub fn save_bundle(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<(), BundleError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&bundle.to_bytes())?;
    f.sync_all()?;
    Ok(())
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ModelBundle, BundleError> {
    ModelBundle::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_arch;

    fn bundle(labels: usize) -> ModelBundle {
        let arch = build_arch(0.25, 1.0, 32).unwrap();
        let mut b = ModelBundle::initialize((0..labels).map(|i| format!("l{i}")).collect(), arch, 5).unwrap();
        let mut head = b.head().clone();
        for (i, w) in head.weights_mut().iter_mut().enumerate() {
            *w = (i as f32).sin();
        }
        b = b.with_head(head).unwrap();
        b
    }

    /// Rewrites the JSON header, keeping the blob.
    fn with_header(bytes: &[u8], edit: impl FnOnce(&mut serde_json::Value)) -> Vec<u8> {
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let mut header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + hlen]).unwrap();
        edit(&mut header);
        let h = serde_json::to_vec(&header).unwrap();
        let mut out = bytes[..8].to_vec();
        out.extend_from_slice(&(h.len() as u64).to_le_bytes());
        out.extend_from_slice(&h);
        out.extend_from_slice(&bytes[16 + hlen..]);
        out
    }

    #[test]
    fn round_trip_is_bitwise() {
        let b = bundle(4);
        let back = ModelBundle::from_bytes(&b.to_bytes()).unwrap();
        assert!(back.bitwise_eq(&b));
        assert_eq!(back.format_version(), FORMAT_VERSION);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ycdm");
        let b = bundle(3);
        save_bundle(&b, &path).unwrap();
        assert!(load_bundle(&path).unwrap().bitwise_eq(&b));
    }

    #[test]
    fn preamble_layout() {
        let bytes = bundle(2).to_bytes();
        assert_eq!(&bytes[..4], b"YCDM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[16..16 + hlen]).unwrap();
        assert_eq!(header["labels"].as_array().unwrap().len(), 2);
        let tensors = header["tensors"].as_array().unwrap();
        assert_eq!(tensors.last().unwrap()["name"], "head.bias");
    }

    #[test]
    fn bad_magic() {
        let mut bytes = bundle(2).to_bytes();
        bytes[0] = b'X';
        let err = ModelBundle::from_bytes(&bytes).unwrap_err();
        assert_eq!(err.code(), "bad_magic");
        assert_eq!(ModelBundle::from_bytes(b"PK").unwrap_err().code(), "bad_magic");
    }

    #[test]
    fn unsupported_version() {
        let mut bytes = bundle(2).to_bytes();
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(
            ModelBundle::from_bytes(&bytes),
            Err(BundleError::UnsupportedVersion(7))
        ));
    }

    #[test]
    fn truncation_anywhere_is_detected() {
        let bytes = bundle(2).to_bytes();
        for cut in [0, 2, 10, 40, bytes.len() / 2, bytes.len() - 1] {
            let err = ModelBundle::from_bytes(&bytes[..cut]).unwrap_err();
            assert_eq!(err.code(), "truncated", "cut at {cut}: {err}");
        }
    }

    #[test]
    fn label_count_disagreeing_with_head_is_a_shape_mismatch() {
        let bytes = bundle(3).to_bytes();
        let bytes = with_header(&bytes, |h| {
            h["labels"].as_array_mut().unwrap().push("extra".into());
        });
        let err = ModelBundle::from_bytes(&bytes).unwrap_err();
        assert_eq!(err.code(), "shape_mismatch", "{err}");
    }

    #[test]
    fn garbage_header_is_malformed() {
        let bytes = bundle(2).to_bytes();
        let bytes = with_header(&bytes, |h| {
            h["arch"] = serde_json::json!("nonsense");
        });
        assert_eq!(ModelBundle::from_bytes(&bytes).unwrap_err().code(), "malformed_header");
    }

    #[test]
    fn constructor_rejects_head_label_mismatch() {
        let b = bundle(3);
        let err = b.with_labels_and_head(vec!["a".into(), "b".into()], b.head().clone()).unwrap_err();
        assert!(matches!(err, ModelError::LabelMismatch { labels: 2, head: 3 }));
    }
}
