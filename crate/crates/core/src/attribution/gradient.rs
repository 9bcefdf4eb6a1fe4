use crate::attribution::{check_target, collapse_channels, meta, prepare_volume, AttributionMap, Method};
use crate::error::Result;
use crate::model::{BackwardOptions, Network, ReluGate};
use crate::tensor::Tensor;

fn target_gradient(
    net: &Network,
    volume: &Tensor,
    target: usize,
    gate: ReluGate,
    record: bool,
) -> Result<(Tensor, Vec<(usize, Tensor)>)> {
    check_target(net, target)?;
    let x = prepare_volume(net, volume)?;
    let (logits, trace) = net.forward(&x)?;
    let mut seed = Tensor::zeros(logits.shape());
    seed.data_mut()[target] = 1.0;
    let back = net.backward(
        &trace,
        &seed,
        BackwardOptions {
            relu: gate,
            param_grads: false,
            record_relu: record,
        },
    )?;
    Ok((collapse_channels(&back.input), back.relu_grads))
}

/// Gradient of the target logit with respect to every input voxel.
pub fn sensitivity_map(net: &Network, volume: &Tensor, target: usize) -> Result<AttributionMap> {
    let (g, _) = target_gradient(net, volume, target, ReluGate::Standard, false)?;
    AttributionMap::new(g, Method::Sensitivity, target, meta(&[("score", "logit".into())]))
}

pub fn guided_backprop_map(net: &Network, volume: &Tensor, target: usize) -> Result<AttributionMap> {
    Ok(guided_backprop_map_with(net, volume, target, true, false)?.map)
}

#[derive(Debug, Clone)]
pub struct GuidedResult {
    pub map: AttributionMap,
    /// `(layer index, gradient after the ReLU gate)` per ReLU, when requested.
    pub relu_grads: Vec<(usize, Tensor)>,
}

/// Guided backpropagation with the gate switchable; with `gating = false`
/// this is the plain gradient pass.
pub fn guided_backprop_map_with(
    net: &Network,
    volume: &Tensor,
    target: usize,
    gating: bool,
    record_relu: bool,
) -> Result<GuidedResult> {
    let gate = if gating { ReluGate::Guided } else { ReluGate::Standard };
    let (g, relu_grads) = target_gradient(net, volume, target, gate, record_relu)?;
    let map = AttributionMap::new(
        g,
        Method::GuidedBackprop,
        target,
        meta(&[("score", "logit".into()), ("gating", gating.to_string())]),
    )?;
    Ok(GuidedResult { map, relu_grads })
}
