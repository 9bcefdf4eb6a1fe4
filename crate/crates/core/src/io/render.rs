//! 8-bit grayscale slice images in binary PGM (P5).

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Depth,
    Height,
    Width,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::Depth => 0,
            Axis::Height => 1,
            Axis::Width => 2,
        }
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "d" | "depth" | "0" => Ok(Axis::Depth),
            "h" | "height" | "1" => Ok(Axis::Height),
            "w" | "width" | "2" => Ok(Axis::Width),
            _ => Err(Error::InvalidParameter(format!("unknown axis {s:?} (expected d, h or w)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceIndex {
    Middle,
    At(usize),
}

impl FromStr for SliceIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "middle" {
            return Ok(SliceIndex::Middle);
        }
        s.parse()
            .map(SliceIndex::At)
            .map_err(|_| Error::InvalidParameter(format!("slice index {s:?} is neither a number nor \"middle\"")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, one byte per pixel.
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// The 2-D slice perpendicular to `axis`, as `(rows, cols, values)`.
fn extract(volume: &Tensor, axis: Axis, index: SliceIndex) -> Result<(usize, usize, Vec<f64>)> {
    let [d, h, w] = match *volume.shape() {
        [d, h, w] => [d, h, w],
        _ => return Err(Error::shape("render", format!("expected a (D, H, W) volume, got {:?}", volume.shape()))),
    };
    let extent = [d, h, w][axis.index()];
    let i = match index {
        SliceIndex::Middle => extent / 2,
        SliceIndex::At(i) if i < extent => i,
        SliceIndex::At(i) => {
            return Err(Error::IndexOutOfRange {
                context: "slice index",
                index: i,
                len: extent,
            })
        }
    };
    let v = volume.data();
    Ok(match axis {
        Axis::Depth => (h, w, v[i * h * w..(i + 1) * h * w].to_vec()),
        Axis::Height => (d, w, (0..d).flat_map(|z| (0..w).map(move |x| (z, x))).map(|(z, x)| v[(z * h + i) * w + x]).collect()),
        Axis::Width => (d, h, (0..d).flat_map(|z| (0..h).map(move |y| (z, y))).map(|(z, y)| v[(z * h + y) * w + i]).collect()),
    })
}

/// Min-max scaled slice; a constant slice renders black.
pub fn render_slice(volume: &Tensor, axis: Axis, index: SliceIndex) -> Result<GrayImage> {
    let (rows, cols, vals) = extract(volume, axis, index)?;
    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let pixels = vals
        .iter()
        .map(|&v| if range > 0.0 { ((v - lo) / range * 255.0).round() as u8 } else { 0 })
        .collect();
    Ok(GrayImage {
        width: cols,
        height: rows,
        pixels,
    })
}

/// Signed rendering: zero is mid-gray (128), the most negative magnitude
/// black and the most positive white, on a symmetric scale.
pub fn render_signed(map: &Tensor, axis: Axis, index: SliceIndex) -> Result<GrayImage> {
    let (rows, cols, vals) = extract(map, axis, index)?;
    let m = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let pixels = vals
        .iter()
        .map(|&v| if m > 0.0 { (127.5 + 127.5 * v / m).round() as u8 } else { 128 })
        .collect();
    Ok(GrayImage {
        width: cols,
        height: rows,
        pixels,
    })
}

pub fn write_pgm(image: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, image.to_pgm()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_is_black() {
        let img = render_slice(&Tensor::full(&[3, 4, 5], 2.5), Axis::Depth, SliceIndex::Middle).unwrap();
        assert_eq!((img.width, img.height), (5, 4));
        assert!(img.pixels.iter().all(|&p| p == 0));
    }

    #[test]
    fn single_bright_voxel() {
        let mut t = Tensor::zeros(&[4, 4, 4]);
        t.data_mut()[(2 * 4 + 1) * 4 + 3] = 9.0;
        for (axis, idx) in [(Axis::Depth, 2), (Axis::Height, 1), (Axis::Width, 3)] {
            let img = render_slice(&t, axis, SliceIndex::At(idx)).unwrap();
            assert_eq!(img.pixels.iter().filter(|&&p| p == 255).count(), 1);
            assert_eq!(img.pixels.iter().filter(|&&p| p != 0).count(), 1);
        }
    }

    #[test]
    fn matches_rescale_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = Tensor::from_fn(&[1, 8, 8], |_| rng.random_range(-5.0..5.0));
        let img = render_slice(&t, Axis::Depth, SliceIndex::At(0)).unwrap();
        let (lo, hi) = t.data().iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        for (p, v) in img.pixels.iter().zip(t.data()) {
            assert_eq!(*p, ((v - lo) * 255.0 / (hi - lo)).round() as u8);
        }
    }

    #[test]
    fn signed_centers_zero() {
        let t = Tensor::new(vec![1, 1, 3], vec![-2.0, 0.0, 1.0]).unwrap();
        let img = render_signed(&t, Axis::Depth, SliceIndex::Middle).unwrap();
        assert_eq!(img.pixels, vec![0, 128, 191]);
        let z = render_signed(&Tensor::zeros(&[1, 2, 2]), Axis::Depth, SliceIndex::Middle).unwrap();
        assert!(z.pixels.iter().all(|&p| p == 128));
    }

    #[test]
    fn side_slices_have_expected_shape() {
        let t = Tensor::from_fn(&[2, 3, 4], |i| i as f64);
        let img = render_slice(&t, Axis::Height, SliceIndex::At(1)).unwrap();
        assert_eq!((img.width, img.height), (4, 2));
        let img = render_slice(&t, Axis::Width, SliceIndex::At(0)).unwrap();
        assert_eq!((img.width, img.height), (3, 2));
    }

    #[test]
    fn pgm_bytes() {
        let img = GrayImage {
            width: 2,
            height: 1,
            pixels: vec![7, 200],
        };
        assert_eq!(img.to_pgm(), b"P5\n2 1\n255\n\x07\xc8");
    }

    #[test]
    fn index_out_of_range() {
        let err = render_slice(&Tensor::zeros(&[2, 2, 2]), Axis::Width, SliceIndex::At(2)).unwrap_err();
        assert_eq!(err.code(), "index-range");
        assert!("x".parse::<Axis>().is_err());
        assert_eq!("middle".parse::<SliceIndex>().unwrap(), SliceIndex::Middle);
    }
}
