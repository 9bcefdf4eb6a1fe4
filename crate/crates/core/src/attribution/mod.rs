//! Relevance maps over the input volume.
//!
//! Every method targets the pre-softmax logit of one class and returns a
//! signed map with the spatial shape of the input. Multi-channel inputs are
//! collapsed by summing over channels.

mod gradient;
mod lrp;
mod occlusion;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::Network;
use crate::tensor::Tensor;

pub use gradient::{guided_backprop_map, guided_backprop_map_with, sensitivity_map, GuidedResult};
pub use lrp::{lrp_map, lrp_relevance, LrpRule, DEFAULT_LRP_EPSILON};
pub use occlusion::{occlusion_map, occlusion_positions, region_occlusion_map, OcclusionConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Sensitivity,
    GuidedBackprop,
    Occlusion,
    RegionOcclusion,
    Lrp,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Sensitivity,
        Method::GuidedBackprop,
        Method::Occlusion,
        Method::RegionOcclusion,
        Method::Lrp,
    ];

    /// Name used on the command line and in metadata.
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Sensitivity => "sensitivity",
            Method::GuidedBackprop => "guided",
            Method::Occlusion => "occlusion",
            Method::RegionOcclusion => "region-occlusion",
            Method::Lrp => "lrp",
        }
    }

    /// Column heading used in region reports.
    pub fn title(self) -> &'static str {
        match self {
            Method::Sensitivity => "Sensitivity Analysis (Backpropagation)",
            Method::GuidedBackprop => "Guided Backpropagation",
            Method::Occlusion => "Occlusion Sensitivity",
            Method::RegionOcclusion => "Brain Area Occlusion",
            Method::Lrp => "Layer-wise Relevance Propagation (LRP)",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unknown method {s:?} (expected sensitivity, guided, occlusion, region-occlusion or lrp)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMap {
    /// `(depth, height, width)`
    pub values: Tensor,
    pub method: Method,
    pub target_class: usize,
    /// Every parameter that influenced `values`.
    pub metadata: BTreeMap<String, String>,
}

impl AttributionMap {
    pub fn new(values: Tensor, method: Method, target_class: usize, metadata: BTreeMap<String, String>) -> Result<Self> {
        if values.rank() != 3 {
            return Err(Error::shape(
                "attribution map",
                format!("values must be (D, H, W), got {:?}", values.shape()),
            ));
        }
        values.check_finite("attribution map")?;
        Ok(AttributionMap {
            values,
            method,
            target_class,
            metadata,
        })
    }

    pub fn abs(&self) -> Tensor {
        self.values.map(f64::abs)
    }

    pub fn positive(&self) -> Tensor {
        self.values.map(|v| v.max(0.0))
    }

    /// Averaged maps carry their sample count; single maps count as one.
    pub fn count(&self) -> usize {
        self.metadata.get("count").and_then(|c| c.parse().ok()).unwrap_or(1)
    }
}

/// Elementwise mean of maps sharing shape, method, target class and parameters.
/// Maps that are themselves averages are weighted by their sample count.
pub fn average_maps(maps: &[AttributionMap]) -> Result<AttributionMap> {
    let first = maps.first().ok_or_else(|| Error::Empty("no maps to average".into()))?;
    let params = |m: &AttributionMap| {
        let mut p = m.metadata.clone();
        p.remove("count");
        p
    };
    let first_params = params(first);
    let mut sum = vec![0.0; first.values.len()];
    let mut count = 0;
    for (i, m) in maps.iter().enumerate() {
        if m.values.shape() != first.values.shape() {
            return Err(Error::Heterogeneous(format!(
                "map {i} has shape {:?}, expected {:?}",
                m.values.shape(),
                first.values.shape()
            )));
        }
        if m.method != first.method {
            return Err(Error::Heterogeneous(format!(
                "map {i} uses method {}, expected {}",
                m.method, first.method
            )));
        }
        if m.target_class != first.target_class {
            return Err(Error::Heterogeneous(format!(
                "map {i} targets class {}, expected {}",
                m.target_class, first.target_class
            )));
        }
        if params(m) != first_params {
            return Err(Error::Heterogeneous(format!("map {i} was produced with different parameters")));
        }
        let weight = m.count();
        for (s, v) in sum.iter_mut().zip(m.values.data()) {
            *s += v * weight as f64;
        }
        count += weight;
    }
    let mean = sum.into_iter().map(|s| s / count as f64).collect();
    let mut metadata = first_params;
    metadata.insert("count".into(), count.to_string());
    AttributionMap::new(
        Tensor::from_parts(first.values.shape().to_vec(), mean),
        first.method,
        first.target_class,
        metadata,
    )
}

/// Batched single-sample input for `net`; a bare `(D, H, W)` volume is
/// accepted for single-channel networks.
pub(crate) fn prepare_volume(net: &Network, volume: &Tensor) -> Result<Tensor> {
    let want = &net.spec().input_shape;
    if want.len() != 4 {
        return Err(Error::shape(
            "attribution",
            format!("network input must be volumetric (C, D, H, W), got {want:?}"),
        ));
    }
    let mut batched = vec![1];
    batched.extend_from_slice(want);
    let ok = volume.shape() == want.as_slice()
        || volume.shape() == batched.as_slice()
        || (want[0] == 1 && volume.shape() == &want[1..]);
    if !ok {
        return Err(Error::mismatch(
            "attribution",
            "volume shape",
            format!("{want:?}"),
            format!("{:?}", volume.shape()),
        ));
    }
    volume.reshape(&batched)
}

pub(crate) fn check_target(net: &Network, target: usize) -> Result<()> {
    if target >= net.spec().num_classes() {
        return Err(Error::LabelOutOfRange {
            context: "target class",
            label: target,
            classes: net.spec().num_classes(),
        });
    }
    Ok(())
}

/// Sums a `(1, C, D, H, W)` tensor over channels.
pub(crate) fn collapse_channels(t: &Tensor) -> Tensor {
    let s = t.shape();
    let (c, vol) = (s[1], s[2] * s[3] * s[4]);
    let mut out = t.data()[..vol].to_vec();
    for ch in 1..c {
        for (o, v) in out.iter_mut().zip(&t.data()[ch * vol..(ch + 1) * vol]) {
            *o += v;
        }
    }
    Tensor::from_parts(vec![s[2], s[3], s[4]], out)
}

pub(crate) fn meta(pairs: &[(&str, String)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}
