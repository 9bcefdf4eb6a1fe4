//! Layer-wise relevance propagation.
//!
//! Relevance starts as the target logit on the output (zero elsewhere) and is
//! redistributed layer by layer back to the input. Affine layers use the
//! epsilon or z⁺ rule; ReLU passes relevance through; max pooling routes it to
//! the winning voxel; flatten reshapes. Bias contributions are absorbed, so
//! exact conservation holds for bias-free networks.

use std::str::FromStr;

use crate::attribution::{check_target, collapse_channels, meta, prepare_volume, AttributionMap, Method};
use crate::error::{Error, Result};
use crate::model::{Layer, LayerParams, Network};
use crate::ops::conv::geometry;
use crate::ops::{conv3d_backward_input, dense_backward_input, maxpool3d_backward, ConvParams, DenseParams};
use crate::tensor::Tensor;

pub const DEFAULT_LRP_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrpRule {
    /// `R_i = Σ_j x_i w_ij / (z_j + ε·sign(z_j)) · R_j`
    Epsilon,
    /// Positive contributions only; the positive part of the bias joins the denominator.
    ZPlus,
}

impl LrpRule {
    pub fn as_str(self) -> &'static str {
        match self {
            LrpRule::Epsilon => "epsilon",
            LrpRule::ZPlus => "zplus",
        }
    }
}

impl FromStr for LrpRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epsilon" => Ok(LrpRule::Epsilon),
            "zplus" => Ok(LrpRule::ZPlus),
            _ => Err(Error::InvalidParameter(format!(
                "unknown LRP rule {s:?} (expected epsilon or zplus)"
            ))),
        }
    }
}

/// `R / (z + ε·sign(z))` with sign(0) = +1; a zero denominator yields zero.
fn stabilized_ratio(relevance: &Tensor, z: &Tensor, epsilon: f64) -> Result<Tensor> {
    relevance.zip_with(z, |r, z| {
        let denom = z + if z >= 0.0 { epsilon } else { -epsilon };
        if denom == 0.0 {
            0.0
        } else {
            r / denom
        }
    })
}

fn dense_zplus(input: &Tensor, p: &DenseParams, relevance: &Tensor) -> Tensor {
    let (b, n) = (input.shape()[0], input.shape()[1]);
    let m = p.out_features();
    let (x, w, bias, r) = (input.data(), p.weights.data(), p.bias.data(), relevance.data());
    let mut out = vec![0.0; b * n];
    for s in 0..b {
        let xr = &x[s * n..(s + 1) * n];
        let dst = &mut out[s * n..(s + 1) * n];
        for j in 0..m {
            let wr = &w[j * n..(j + 1) * n];
            let z: f64 = bias[j].max(0.0) + xr.iter().zip(wr).map(|(a, b)| (a * b).max(0.0)).sum::<f64>();
            if z == 0.0 {
                continue;
            }
            let ratio = r[s * m + j] / z;
            for ((d, xi), wi) in dst.iter_mut().zip(xr).zip(wr) {
                *d += (xi * wi).max(0.0) * ratio;
            }
        }
    }
    Tensor::from_parts(input.shape().to_vec(), out)
}

fn conv_zplus(input: &Tensor, p: &ConvParams, relevance: &Tensor) -> Result<Tensor> {
    let g = geometry(input, p)?;
    let (in_vol, out_vol, k_vol) = (g.in_volume(), g.out_volume(), g.kernel_volume());
    let (x, w, bias, r) = (input.data(), p.kernels.data(), p.bias.data(), relevance.data());
    let mut z = vec![0.0; g.batch * g.out_channels * out_vol];
    for n in 0..g.batch {
        for oc in 0..g.out_channels {
            let dst = &mut z[(n * g.out_channels + oc) * out_vol..][..out_vol];
            dst.fill(bias[oc].max(0.0));
            for ic in 0..g.in_channels {
                let src = &x[(n * g.in_channels + ic) * in_vol..][..in_vol];
                let ker = &w[(oc * g.in_channels + ic) * k_vol..][..k_vol];
                g.for_each_tap(|o, i, k| dst[o] += (src[i] * ker[k]).max(0.0));
            }
        }
    }
    let ratio: Vec<f64> = r.iter().zip(&z).map(|(r, z)| if *z == 0.0 { 0.0 } else { r / z }).collect();
    let mut out = vec![0.0; input.len()];
    for n in 0..g.batch {
        for ic in 0..g.in_channels {
            let src = &x[(n * g.in_channels + ic) * in_vol..][..in_vol];
            let dst = &mut out[(n * g.in_channels + ic) * in_vol..][..in_vol];
            for oc in 0..g.out_channels {
                let s = &ratio[(n * g.out_channels + oc) * out_vol..][..out_vol];
                let ker = &w[(oc * g.in_channels + ic) * k_vol..][..k_vol];
                g.for_each_tap(|o, i, k| dst[i] += (src[i] * ker[k]).max(0.0) * s[o]);
            }
        }
    }
    Ok(Tensor::from_parts(input.shape().to_vec(), out))
}

/// Input relevance for the batched input `(1, C, D, H, W)`.
pub fn lrp_relevance(net: &Network, volume: &Tensor, target: usize, rule: LrpRule, epsilon: f64) -> Result<Tensor> {
    check_target(net, target)?;
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParameter("LRP epsilon must be non-negative".into()));
    }
    let x = prepare_volume(net, volume)?;
    let (logits, trace) = net.forward(&x)?;
    let mut relevance = Tensor::zeros(logits.shape());
    relevance.data_mut()[target] = logits.data()[target];
    for i in (0..net.spec().layers.len()).rev() {
        let input = trace.layer_input(i);
        relevance = match (&net.spec().layers[i], &net.params()[i]) {
            (Layer::Dense { .. }, LayerParams::Dense(p)) => match rule {
                LrpRule::Epsilon => {
                    let s = stabilized_ratio(&relevance, trace.layer_output(i), epsilon)?;
                    input.zip_with(&dense_backward_input(&p.weights, &s)?, |a, c| a * c)?
                }
                LrpRule::ZPlus => dense_zplus(input, p, &relevance),
            },
            (Layer::Conv3d { .. }, LayerParams::Conv(p)) => match rule {
                LrpRule::Epsilon => {
                    let s = stabilized_ratio(&relevance, trace.layer_output(i), epsilon)?;
                    input.zip_with(&conv3d_backward_input(input, p, &s)?, |a, c| a * c)?
                }
                LrpRule::ZPlus => conv_zplus(input, p, &relevance)?,
            },
            (Layer::Relu, _) => relevance,
            (Layer::MaxPool3d { .. }, _) => {
                let arg = trace.argmax[i].as_ref().ok_or_else(|| Error::InvalidSpec {
                    layer: Some(i),
                    msg: "trace lacks pooling argmax".into(),
                })?;
                maxpool3d_backward(arg, &relevance, input.shape())?
            }
            (Layer::Flatten, _) => relevance.into_reshaped(input.shape())?,
            (layer, _) => {
                return Err(Error::InvalidSpec {
                    layer: Some(i),
                    msg: format!("LRP does not support {} with these parameters", layer.kind()),
                })
            }
        };
    }
    relevance.check_finite("LRP relevance")?;
    Ok(relevance)
}

pub fn lrp_map(net: &Network, volume: &Tensor, target: usize, rule: LrpRule, epsilon: f64) -> Result<AttributionMap> {
    let r = lrp_relevance(net, volume, target, rule, epsilon)?;
    AttributionMap::new(
        collapse_channels(&r),
        Method::Lrp,
        target,
        meta(&[
            ("score", "logit".into()),
            ("rule", rule.as_str().into()),
            ("epsilon", format!("{epsilon:?}")),
        ]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::sensitivity_map;
    use crate::model::{init_network, NetworkSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn volume(seed: u64, shape: &[usize]) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    fn with_biases(net: &Network, seed: u64) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut n = net.clone();
        for p in n.params_mut() {
            let mut ts = p.tensors_mut();
            if ts.len() == 2 {
                for v in ts[1].data_mut() {
                    *v = rng.random_range(-0.2..0.2);
                }
            }
        }
        n
    }

    fn linear(seed: u64) -> Network {
        let spec = NetworkSpec::new(
            vec![1, 2, 3, 4],
            vec![Layer::Flatten, Layer::dense(3)],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        init_network(spec, seed).unwrap()
    }

    #[test]
    fn zero_volume_zero_bias() {
        let net = init_network(NetworkSpec::desk_default(&["CN", "AD"]), 1).unwrap();
        let m = lrp_map(&net, &Tensor::zeros(&[16, 16, 16]), 1, LrpRule::Epsilon, 0.0).unwrap();
        assert!(m.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_layer_closed_form() {
        let net = linear(2);
        let x = volume(3, &[1, 2, 3, 4]);
        let m = lrp_map(&net, &x, 1, LrpRule::Epsilon, 0.0).unwrap();
        let LayerParams::Dense(d) = &net.params()[1] else { panic!() };
        for i in 0..24 {
            let expected = d.weights.data()[24 + i] * x.data()[i];
            assert!((m.values.data()[i] - expected).abs() <= 1e-12 * expected.abs().max(1e-3));
        }
    }

    #[test]
    fn equals_gradient_times_input_without_bias() {
        let net = init_network(NetworkSpec::desk_default(&["CN", "AD"]), 4).unwrap();
        let x = volume(5, &[16, 16, 16]);
        let lrp = lrp_map(&net, &x, 1, LrpRule::Epsilon, 0.0).unwrap();
        let grad = sensitivity_map(&net, &x, 1).unwrap();
        for i in 0..x.len() {
            let gi = grad.values.data()[i] * x.data()[i];
            let l = lrp.values.data()[i];
            assert!((l - gi).abs() <= 1e-9 * gi.abs().max(1e-12), "voxel {i}: {l} vs {gi}");
        }
    }

    #[test]
    fn conserves_with_either_rule() {
        let net = init_network(NetworkSpec::desk_default(&["CN", "AD"]), 6).unwrap();
        let x = volume(7, &[16, 16, 16]);
        let (logits, _) = net.forward(&x.reshape(&[1, 1, 16, 16, 16]).unwrap()).unwrap();
        for target in 0..2 {
            let logit = logits.data()[target];
            let total = lrp_map(&net, &x, target, LrpRule::Epsilon, 0.0).unwrap().values.sum();
            assert!((total - logit).abs() <= 1e-9 * logit.abs(), "{total} vs {logit}");
            if logit > 0.0 {
                let total = lrp_map(&net, &x, target, LrpRule::ZPlus, 0.0).unwrap().values.sum();
                assert!((total - logit).abs() <= 1e-9 * logit.abs(), "zplus {total} vs {logit}");
            }
        }
    }

    #[test]
    fn zplus_is_non_negative_for_positive_logit() {
        let mut checked = 0;
        for seed in 0..20 {
            let net = with_biases(&init_network(NetworkSpec::desk_default(&["CN", "AD"]), seed).unwrap(), seed + 100);
            let x = volume(seed + 200, &[16, 16, 16]);
            let (logits, _) = net.forward(&x.reshape(&[1, 1, 16, 16, 16]).unwrap()).unwrap();
            let Some(target) = (0..2).find(|&t| logits.data()[t] > 0.0) else { continue };
            let m = lrp_map(&net, &x, target, LrpRule::ZPlus, 0.0).unwrap();
            assert!(m.values.data().iter().all(|&v| v >= 0.0));
            checked += 1;
        }
        assert!(checked >= 5);
    }

    #[test]
    fn dense_zplus_closed_form() {
        let net = linear(11);
        let x = volume(12, &[1, 2, 3, 4]);
        let m = lrp_map(&net, &x, 0, LrpRule::ZPlus, 0.0).unwrap();
        let LayerParams::Dense(d) = &net.params()[1] else { panic!() };
        let logit: f64 = (0..24).map(|i| d.weights.data()[i] * x.data()[i]).sum();
        let zp: f64 = (0..24).map(|i| (d.weights.data()[i] * x.data()[i]).max(0.0)).sum();
        for i in 0..24 {
            let expected = (d.weights.data()[i] * x.data()[i]).max(0.0) / zp * logit;
            assert!((m.values.data()[i] - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let net = linear(1);
        let x = volume(1, &[1, 2, 3, 4]);
        assert_eq!(lrp_map(&net, &x, 0, LrpRule::Epsilon, -1.0).unwrap_err().code(), "parameter");
        assert_eq!(lrp_map(&net, &x, 3, LrpRule::Epsilon, 0.0).unwrap_err().code(), "label-range");
        assert!("alphabeta".parse::<LrpRule>().is_err());
    }
}
