use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Z-scores the strictly positive voxels (the foreground) and zeroes the rest.
pub fn normalize(volume: &Tensor) -> Result<Tensor> {
    volume.check_finite("normalize")?;
    let first = volume.data().first().copied().unwrap_or(0.0);
    if volume.data().iter().all(|&v| v == first) {
        return Err(Error::ConstantVolume);
    }
    let fg: Vec<f64> = volume.data().iter().copied().filter(|&v| v > 0.0).collect();
    if fg.is_empty() {
        return Err(Error::Empty("volume has no positive (foreground) voxels".into()));
    }
    let n = fg.len() as f64;
    let mean = fg.iter().sum::<f64>() / n;
    let var = fg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var == 0.0 {
        return Err(Error::ConstantVolume);
    }
    let sd = var.sqrt();
    Ok(volume.map(|v| if v > 0.0 { (v - mean) / sd } else { 0.0 }))
}
