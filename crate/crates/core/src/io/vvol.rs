//! Raw volume format: `VVOL`, version byte, dtype byte (1 = int16,
//! 2 = float32, 3 = float64), extents d, h, w as u32 LE, then the payload.

use crate::error::{Error, Result};
use crate::io::{volume_dims, Dtype, VolumeFile, VolumeFormat};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"VVOL";
pub const VERSION: u8 = 1;
const HEADER: usize = 4 + 1 + 1 + 12;

fn dtype_code(d: Dtype) -> u8 {
    match d {
        Dtype::I16 => 1,
        Dtype::F32 => 2,
        Dtype::F64 => 3,
    }
}

pub fn encode(tensor: &Tensor, dtype: Dtype) -> Result<Vec<u8>> {
    let dims = volume_dims(tensor)?;
    let mut out = Vec::with_capacity(HEADER + tensor.len() * dtype.size());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(dtype_code(dtype));
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::InvalidParameter(format!("extent {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend(dtype.encode(tensor.data())?);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<VolumeFile> {
    if bytes.len() < HEADER {
        return Err(Error::Truncated {
            expected: HEADER,
            found: bytes.len(),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            expected: "VVOL".into(),
            found: String::from_utf8_lossy(&bytes[..4]).into_owned(),
        });
    }
    if bytes[4] != VERSION {
        return Err(Error::UnsupportedVersion(bytes[4]));
    }
    let dtype = match bytes[5] {
        1 => Dtype::I16,
        2 => Dtype::F32,
        3 => Dtype::F64,
        c => return Err(Error::UnsupportedDatatype(c as i32)),
    };
    let mut dims = [0usize; 3];
    for (i, d) in dims.iter_mut().enumerate() {
        *d = u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().unwrap()) as usize;
    }
    if dims.contains(&0) {
        return Err(Error::shape("vvol", format!("extents must be positive, got {dims:?}")));
    }
    let expected = dims.iter().product::<usize>() * dtype.size();
    let payload = &bytes[HEADER..];
    if payload.len() != expected {
        return Err(Error::Truncated {
            expected,
            found: payload.len(),
        });
    }
    let tensor = Tensor::new(dims.to_vec(), dtype.decode(payload))?;
    Ok(VolumeFile {
        tensor,
        dtype,
        format: VolumeFormat::Vvol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize]) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        Tensor::from_fn(shape, |_| rng.random_range(-1e3..1e3))
    }

    #[test]
    fn float64_round_trip_is_bitwise() {
        let t = random(&[8, 8, 8]);
        let back = decode(&encode(&t, Dtype::F64).unwrap()).unwrap();
        assert_eq!(back.dtype, Dtype::F64);
        assert!(t.data().iter().zip(back.tensor.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn float32_round_trip_of_representable_values() {
        let t = random(&[2, 3, 4]).map(|v| v as f32 as f64);
        assert_eq!(decode(&encode(&t, Dtype::F32).unwrap()).unwrap().tensor, t);
    }

    #[test]
    fn layout_bytes() {
        let t = Tensor::new(vec![1, 1, 2], vec![1.0, -2.0]).unwrap();
        let b = encode(&t, Dtype::I16).unwrap();
        assert_eq!(b, [b"VVOL".as_slice(), &[1, 1, 1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0xfe, 0xff]].concat());
    }

    #[test]
    fn errors() {
        let t = random(&[2, 2, 2]);
        let good = encode(&t, Dtype::F64).unwrap();
        let mut bad = good.clone();
        bad[4] = 9;
        assert_eq!(decode(&bad).unwrap_err().code(), "version");
        let mut bad = good.clone();
        bad[5] = 7;
        assert_eq!(decode(&bad).unwrap_err().code(), "datatype");
        assert_eq!(decode(&good[..good.len() - 1]).unwrap_err().code(), "truncated");
        assert_eq!(decode(&good[..10]).unwrap_err().code(), "truncated");
        assert!(encode(&Tensor::zeros(&[4, 4]), Dtype::F64).is_err());
    }
}
