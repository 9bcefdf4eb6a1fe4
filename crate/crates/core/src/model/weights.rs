//! Binary weight files.
//!
//! Layout: magic `VXW1`, version byte `0x01`, header length as u64 LE, UTF-8
//! header, then every parameter as contiguous f64 LE in layer order with
//! kernels/weights before biases. The header is the canonical spec text, a
//! `---` separator, one `param` line per tensor and a final `payload_bytes`
//! line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::network::{param_shapes, Network};
use crate::model::spec::NetworkSpec;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"VXW1";
pub const VERSION: u8 = 1;
const PREAMBLE: usize = 4 + 1 + 8;

fn shape_text(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
}

fn header_for(spec: &NetworkSpec) -> Result<(String, usize)> {
    let mut header = spec.to_text();
    header.push_str("---\n");
    let mut offset = 0;
    for (layer, group) in param_shapes(spec)?.iter().enumerate() {
        for (name, shape) in group {
            let count: usize = shape.iter().product();
            writeln!(
                header,
                "param layer={layer} name={name} shape={} offset={offset} count={count}",
                shape_text(shape)
            )
            .unwrap();
            offset += count;
        }
    }
    writeln!(header, "payload_bytes={}", offset * 8).unwrap();
    Ok((header, offset))
}

pub fn encode_weights(net: &Network) -> Result<Vec<u8>> {
    let (header, count) = header_for(net.spec())?;
    let mut out = Vec::with_capacity(PREAMBLE + header.len() + count * 8);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for params in net.params() {
        for (_, t) in params.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn save_weights(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_weights(net)?).map_err(|e| Error::io(path, e))
}

struct Parsed<'a> {
    header: &'a str,
    payload: &'a [u8],
}

fn split(bytes: &[u8]) -> Result<Parsed<'_>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            expected: "VXW1".into(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
        });
    }
    if bytes.len() < PREAMBLE {
        return Err(Error::Truncated {
            expected: PREAMBLE,
            found: bytes.len(),
        });
    }
    if bytes[4] != VERSION {
        return Err(Error::UnsupportedVersion(bytes[4]));
    }
    let header_len = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
    let rest = &bytes[PREAMBLE..];
    if header_len > rest.len() {
        return Err(Error::Truncated {
            expected: PREAMBLE + header_len,
            found: bytes.len(),
        });
    }
    let header = std::str::from_utf8(&rest[..header_len])
        .map_err(|e| Error::Unsupported(format!("weight header is not UTF-8: {e}")))?;
    Ok(Parsed {
        header,
        payload: &rest[header_len..],
    })
}

fn declared_payload(header: &str) -> Result<usize> {
    header
        .lines()
        .rev()
        .find_map(|l| l.strip_prefix("payload_bytes="))
        .ok_or_else(|| Error::Parse {
            line: 0,
            msg: "weight header lacks payload_bytes".into(),
        })?
        .trim()
        .parse()
        .map_err(|e| Error::Parse {
            line: 0,
            msg: format!("bad payload_bytes: {e}"),
        })
}

fn decode_with(spec: NetworkSpec, parsed: &Parsed<'_>) -> Result<Network> {
    let (expected_header, count) = header_for(&spec)?;
    let declared = declared_payload(parsed.header)?;
    if declared != parsed.payload.len() {
        return Err(Error::Truncated {
            expected: declared,
            found: parsed.payload.len(),
        });
    }
    if parsed.header != expected_header {
        let (theirs, ours) = (parsed.header.lines(), expected_header.lines());
        let diff = theirs
            .zip(ours)
            .find(|(a, b)| a != b)
            .map(|(a, b)| format!("file has {a:?}, spec expects {b:?}"))
            .unwrap_or_else(|| "header length differs".into());
        return Err(Error::SpecMismatch(diff));
    }
    if declared != count * 8 {
        return Err(Error::Truncated {
            expected: count * 8,
            found: declared,
        });
    }
    let mut values = parsed
        .payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let tensors = param_shapes(&spec)?
        .into_iter()
        .map(|group| {
            group
                .into_iter()
                .map(|(_, shape)| {
                    let n = shape.iter().product();
                    Tensor::new(shape, values.by_ref().take(n).collect())
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Network::from_tensors(spec, tensors)
}

/// Decodes a weight file, requiring it to match `spec` exactly.
pub fn decode_weights(spec: &NetworkSpec, bytes: &[u8]) -> Result<Network> {
    decode_with(spec.clone(), &split(bytes)?)
}

/// Decodes a weight file using the spec embedded in its header.
pub fn decode_weights_embedded(bytes: &[u8]) -> Result<Network> {
    let parsed = split(bytes)?;
    let spec_text = parsed
        .header
        .split_once("---\n")
        .map(|(s, _)| s)
        .ok_or_else(|| Error::Parse {
            line: 0,
            msg: "weight header lacks spec separator".into(),
        })?;
    let spec = NetworkSpec::parse(spec_text)?;
    decode_with(spec, &parsed)
}

pub fn load_weights(spec: &NetworkSpec, path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(spec, &bytes)
}

pub fn load_weights_embedded(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights_embedded(&bytes)
}
