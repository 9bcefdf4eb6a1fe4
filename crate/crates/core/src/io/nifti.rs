//! Single-file, uncompressed, little-endian NIfTI-1 with three dimensions.
//!
//! Only datatype codes 4 (int16), 16 (float32) and 64 (float64) are read.
//! Intensity scaling other than the identity is rejected rather than applied
//! silently. `dim[1]` (x) varies fastest, so the in-memory `(D, H, W)` tensor
//! maps to `dim = [3, W, H, D]`.

use crate::error::{Error, Result};
use crate::io::{volume_dims, Dtype, VolumeFile, VolumeFormat};
use crate::tensor::Tensor;

const HEADER: usize = 348;
const VOX_OFFSET: usize = 352;

fn i16_at(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn i32_at(b: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn f32_at(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(b[off..off + 4].try_into().unwrap())
}

fn datatype(code: i16) -> Result<Dtype> {
    match code {
        4 => Ok(Dtype::I16),
        16 => Ok(Dtype::F32),
        64 => Ok(Dtype::F64),
        c => Err(Error::UnsupportedDatatype(c as i32)),
    }
}

fn code_of(d: Dtype) -> i16 {
    match d {
        Dtype::I16 => 4,
        Dtype::F32 => 16,
        Dtype::F64 => 64,
    }
}

pub fn decode(bytes: &[u8]) -> Result<VolumeFile> {
    if bytes.len() < HEADER {
        return Err(Error::Truncated {
            expected: HEADER,
            found: bytes.len(),
        });
    }
    let sizeof_hdr = i32_at(bytes, 0);
    if sizeof_hdr != HEADER as i32 {
        if i32::from_be_bytes(bytes[0..4].try_into().unwrap()) == HEADER as i32 {
            return Err(Error::Unsupported("big-endian NIfTI".into()));
        }
        return Err(Error::Unsupported(format!("NIfTI sizeof_hdr {sizeof_hdr}, expected 348")));
    }
    if &bytes[344..348] != b"n+1\0" {
        return Err(Error::BadMagic {
            expected: "n+1\\0".into(),
            found: String::from_utf8_lossy(&bytes[344..348]).into_owned(),
        });
    }
    let dim: Vec<i16> = (0..8).map(|i| i16_at(bytes, 40 + 2 * i)).collect();
    if dim[0] != 3 {
        return Err(Error::Unsupported(format!("NIfTI dim[0] = {}, only 3-D volumes are read", dim[0])));
    }
    if dim[1..4].iter().any(|&d| d <= 0) {
        return Err(Error::shape("nifti", format!("non-positive extent in dim {:?}", &dim[1..4])));
    }
    let dtype = datatype(i16_at(bytes, 70))?;
    let bitpix = i16_at(bytes, 72);
    if bitpix as usize != dtype.size() * 8 {
        return Err(Error::Unsupported(format!(
            "bitpix {bitpix} inconsistent with datatype {}",
            dtype
        )));
    }
    let vox_offset = f32_at(bytes, 108);
    if vox_offset.is_nan() || vox_offset < VOX_OFFSET as f32 || vox_offset.fract() != 0.0 {
        return Err(Error::Unsupported(format!("vox_offset {vox_offset}, expected an integer >= 352")));
    }
    let (slope, inter) = (f32_at(bytes, 112), f32_at(bytes, 116));
    if !(slope == 0.0 || slope == 1.0) || inter != 0.0 {
        return Err(Error::Unsupported(format!(
            "intensity scaling scl_slope={slope} scl_inter={inter}"
        )));
    }
    let (w, h, d) = (dim[1] as usize, dim[2] as usize, dim[3] as usize);
    let start = vox_offset as usize;
    let expected = w * h * d * dtype.size();
    let found = bytes.len().saturating_sub(start);
    if found != expected {
        return Err(Error::Truncated { expected, found });
    }
    let tensor = Tensor::new(vec![d, h, w], dtype.decode(&bytes[start..]))?;
    Ok(VolumeFile {
        tensor,
        dtype,
        format: VolumeFormat::Nifti,
    })
}

pub fn encode(tensor: &Tensor, dtype: Dtype) -> Result<Vec<u8>> {
    let [d, h, w] = volume_dims(tensor)?;
    let mut hdr = vec![0u8; VOX_OFFSET];
    let mut put = |off: usize, b: &[u8]| hdr[off..off + b.len()].copy_from_slice(b);
    put(0, &(HEADER as i32).to_le_bytes());
    let mut dim = [1i16; 8];
    dim[0] = 3;
    for (slot, extent) in dim[1..4].iter_mut().zip([w, h, d]) {
        *slot = i16::try_from(extent)
            .map_err(|_| Error::InvalidParameter(format!("extent {extent} exceeds the NIfTI-1 limit")))?;
    }
    for (i, v) in dim.iter().enumerate() {
        put(40 + 2 * i, &v.to_le_bytes());
    }
    put(70, &code_of(dtype).to_le_bytes());
    put(72, &((dtype.size() * 8) as i16).to_le_bytes());
    for i in 0..4 {
        put(76 + 4 * i, &1f32.to_le_bytes());
    }
    put(108, &(VOX_OFFSET as f32).to_le_bytes());
    put(112, &1f32.to_le_bytes());
    put(344, b"n+1\0");
    hdr.extend(dtype.encode(tensor.data())?);
    Ok(hdr)
}
