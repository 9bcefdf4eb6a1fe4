//! Volume files, dataset manifests, synthetic data and slice rendering.

pub mod manifest;
pub mod nifti;
pub mod normalize;
pub mod render;
pub mod synth;
pub mod vvol;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use manifest::{
    format_manifest, label_indices, parse_manifest, read_manifest, split_manifest, write_manifest, Record, Split,
    SplitFractions,
};
pub use normalize::normalize;
pub use render::{render_signed, render_slice, write_pgm, Axis, GrayImage, SliceIndex};
pub use synth::{generate_synthetic, write_synthetic, SynthesisConfig, SyntheticDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    I16,
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::I16 => 2,
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::I16 => "int16",
            Dtype::F32 => "float32",
            Dtype::F64 => "float64",
        }
    }

    /// Little-endian payload. Integer output requires integral values in range.
    pub(crate) fn encode(self, values: &[f64]) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(values.len() * self.size());
        for &v in values {
            match self {
                Dtype::I16 => {
                    if v.fract() != 0.0 || v < i16::MIN as f64 || v > i16::MAX as f64 {
                        return Err(Error::InvalidParameter(format!("value {v} is not representable as int16")));
                    }
                    out.extend_from_slice(&(v as i16).to_le_bytes());
                }
                Dtype::F32 => {
                    let f = v as f32;
                    if !f.is_finite() {
                        return Err(Error::InvalidParameter(format!("value {v} overflows float32")));
                    }
                    out.extend_from_slice(&f.to_le_bytes());
                }
                Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
        Ok(out)
    }

    pub(crate) fn decode(self, bytes: &[u8]) -> Vec<f64> {
        match self {
            Dtype::I16 => bytes.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]]) as f64).collect(),
            Dtype::F32 => bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect(),
            Dtype::F64 => bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "int16" => Ok(Dtype::I16),
            "float32" => Ok(Dtype::F32),
            "float64" => Ok(Dtype::F64),
            _ => Err(Error::InvalidParameter(format!(
                "unknown dtype {s:?} (expected int16, float32 or float64)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeFormat {
    Vvol,
    Nifti,
}

impl VolumeFormat {
    /// `.nii` selects NIfTI, anything else VVOL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("nii") => VolumeFormat::Nifti,
            _ => VolumeFormat::Vvol,
        }
    }
}

/// A decoded volume together with its on-disk representation.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeFile {
    /// `(depth, height, width)`
    pub tensor: Tensor,
    pub dtype: Dtype,
    pub format: VolumeFormat,
}

pub(crate) fn volume_dims(t: &Tensor) -> Result<[usize; 3]> {
    match *t.shape() {
        [d, h, w] => Ok([d, h, w]),
        _ => Err(Error::shape(
            "write_volume",
            format!("volumes must be (D, H, W), got {:?}", t.shape()),
        )),
    }
}

pub fn decode_volume(bytes: &[u8]) -> Result<VolumeFile> {
    if bytes.starts_with(vvol::MAGIC) {
        return vvol::decode(bytes);
    }
    if bytes.starts_with(&[0x1f, 0x8b]) {
        return Err(Error::Unsupported("gzip-compressed volume".into()));
    }
    if bytes.len() >= 348 {
        match &bytes[344..348] {
            b"n+1\0" => return nifti::decode(bytes),
            b"ni1\0" => return Err(Error::Unsupported("two-file NIfTI (.hdr/.img) pair".into())),
            _ => {}
        }
    }
    let found = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
    Err(Error::BadMagic {
        expected: "VVOL or n+1".into(),
        found,
    })
}

pub fn encode_volume(tensor: &Tensor, format: VolumeFormat, dtype: Dtype) -> Result<Vec<u8>> {
    match format {
        VolumeFormat::Vvol => vvol::encode(tensor, dtype),
        VolumeFormat::Nifti => nifti::encode(tensor, dtype),
    }
}

pub fn read_volume_file(path: impl AsRef<Path>) -> Result<VolumeFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_volume(&bytes)
}

/// Reads a VVOL or NIfTI volume as `(D, H, W)` f64 values.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Tensor> {
    Ok(read_volume_file(path)?.tensor)
}

pub fn write_volume(tensor: &Tensor, path: impl AsRef<Path>, format: VolumeFormat, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_volume(tensor, format, dtype)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
