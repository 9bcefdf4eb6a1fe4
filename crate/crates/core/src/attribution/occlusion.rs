use rayon::prelude::*;

use crate::atlas::{region_masks, Atlas};
use crate::attribution::{check_target, meta, prepare_volume, AttributionMap, Method};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcclusionConfig {
    pub patch: [usize; 3],
    pub stride: [usize; 3],
    /// Value written into occluded voxels.
    pub baseline: f64,
}

impl OcclusionConfig {
    pub fn cube(patch: usize, stride: usize, baseline: f64) -> Self {
        OcclusionConfig {
            patch: [patch; 3],
            stride: [stride; 3],
            baseline,
        }
    }
}

impl Default for OcclusionConfig {
    /// Desk-scale default: 4³ patches every 2 voxels, zero fill.
    fn default() -> Self {
        Self::cube(4, 2, 0.0)
    }
}

/// Patch start offsets along one axis. Starts step by `stride` from 0 and a
/// final start is clamped to `extent - patch`, so the patches cover the axis.
pub fn occlusion_positions(extent: usize, patch: usize, stride: usize) -> Result<Vec<usize>> {
    if patch == 0 || stride == 0 {
        return Err(Error::InvalidParameter("occlusion patch and stride must be positive".into()));
    }
    if patch > extent {
        return Err(Error::InvalidParameter(format!(
            "occlusion patch {patch} larger than volume extent {extent}"
        )));
    }
    if stride > patch {
        return Err(Error::InvalidParameter(format!(
            "occlusion stride {stride} exceeds patch {patch}; patches would leave gaps"
        )));
    }
    let last = extent - patch;
    let mut starts: Vec<usize> = (0..=last).step_by(stride).collect();
    if *starts.last().unwrap() != last {
        starts.push(last);
    }
    Ok(starts)
}

fn target_logit(net: &Network, x: &Tensor, target: usize) -> Result<f64> {
    let (logits, _) = net.forward(x)?;
    Ok(logits.data()[target])
}

/// Sliding-patch occlusion: each voxel gets the mean logit drop over every
/// patch that covers it.
pub fn occlusion_map(net: &Network, volume: &Tensor, target: usize, cfg: &OcclusionConfig) -> Result<AttributionMap> {
    check_target(net, target)?;
    if !cfg.baseline.is_finite() {
        return Err(Error::InvalidParameter("occlusion baseline must be finite".into()));
    }
    let x = prepare_volume(net, volume)?;
    let s = x.shape().to_vec();
    let (c, dims) = (s[1], [s[2], s[3], s[4]]);
    let axes = (0..3)
        .map(|a| occlusion_positions(dims[a], cfg.patch[a], cfg.stride[a]))
        .collect::<Result<Vec<_>>>()?;
    let mut patches = Vec::with_capacity(axes[0].len() * axes[1].len() * axes[2].len());
    for &z in &axes[0] {
        for &y in &axes[1] {
            for &xx in &axes[2] {
                patches.push([z, y, xx]);
            }
        }
    }

    let original = target_logit(net, &x, target)?;
    let [d, h, w] = dims;
    let [pd, ph, pw] = cfg.patch;
    let deltas = patches
        .par_iter()
        .map(|&[z0, y0, x0]| {
            let mut occluded = x.clone();
            let buf = occluded.data_mut();
            for ch in 0..c {
                for z in z0..z0 + pd {
                    for y in y0..y0 + ph {
                        let row = ((ch * d + z) * h + y) * w;
                        buf[row + x0..row + x0 + pw].fill(cfg.baseline);
                    }
                }
            }
            Ok(original - target_logit(net, &occluded, target)?)
        })
        .collect::<Result<Vec<f64>>>()?;

    let mut sum = vec![0.0; d * h * w];
    let mut hits = vec![0u32; d * h * w];
    for (&[z0, y0, x0], delta) in patches.iter().zip(&deltas) {
        for z in z0..z0 + pd {
            for y in y0..y0 + ph {
                for xx in x0..x0 + pw {
                    let i = (z * h + y) * w + xx;
                    sum[i] += delta;
                    hits[i] += 1;
                }
            }
        }
    }
    if let Some(i) = hits.iter().position(|&n| n == 0) {
        // occlusion_positions guarantees coverage; reaching this is a bug
        return Err(Error::InvalidParameter(format!("voxel {i} not covered by any patch")));
    }
    let values = sum.iter().zip(&hits).map(|(s, &n)| s / n as f64).collect();
    let triple = |v: [usize; 3]| format!("{}x{}x{}", v[0], v[1], v[2]);
    AttributionMap::new(
        Tensor::from_parts(dims.to_vec(), values),
        Method::Occlusion,
        target,
        meta(&[
            ("score", "logit".into()),
            ("patch", triple(cfg.patch)),
            ("stride", triple(cfg.stride)),
            ("baseline", format!("{:?}", cfg.baseline)),
            ("patches", patches.len().to_string()),
        ]),
    )
}

/// Occludes one atlas region at a time; region voxels receive that region's
/// logit drop and background voxels zero.
pub fn region_occlusion_map(
    net: &Network,
    volume: &Tensor,
    target: usize,
    atlas: &Atlas,
    baseline: f64,
) -> Result<AttributionMap> {
    check_target(net, target)?;
    if !baseline.is_finite() {
        return Err(Error::InvalidParameter("occlusion baseline must be finite".into()));
    }
    let x = prepare_volume(net, volume)?;
    let s = x.shape();
    let (c, dims) = (s[1], [s[2], s[3], s[4]]);
    if atlas.shape() != dims {
        return Err(Error::mismatch(
            "region_occlusion",
            "atlas shape",
            format!("{dims:?}"),
            format!("{:?}", atlas.shape()),
        ));
    }
    let vol: usize = dims.iter().product();
    let masks: Vec<(u32, Vec<usize>)> = region_masks(atlas).into_iter().collect();
    if masks.is_empty() {
        return Err(Error::InvalidAtlas("no non-background region".into()));
    }
    let original = target_logit(net, &x, target)?;
    let deltas = masks
        .par_iter()
        .map(|(_, voxels)| {
            let mut occluded = x.clone();
            let buf = occluded.data_mut();
            for ch in 0..c {
                for &i in voxels {
                    buf[ch * vol + i] = baseline;
                }
            }
            Ok(original - target_logit(net, &occluded, target)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut values = vec![0.0; vol];
    for ((_, voxels), delta) in masks.iter().zip(&deltas) {
        for &i in voxels {
            values[i] = *delta;
        }
    }
    AttributionMap::new(
        Tensor::from_parts(dims.to_vec(), values),
        Method::RegionOcclusion,
        target,
        meta(&[
            ("score", "logit".into()),
            ("baseline", format!("{baseline:?}")),
            ("regions", masks.len().to_string()),
        ]),
    )
}
