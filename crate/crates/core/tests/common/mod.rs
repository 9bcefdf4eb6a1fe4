#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use voxrel::model::{init_network, Layer, LayerParams, Network, NetworkSpec};
use voxrel::ops::{
    conv3d_backward, conv3d_forward, dense_backward, dense_forward, maxpool3d_backward, maxpool3d_forward,
    relu_backward, relu_forward, Argmax, PoolParams,
};
use voxrel::Tensor;

pub const FD_STEP: f64 = 1e-5;
/// Below this magnitude relative error is measured against the floor instead.
pub const REL_FLOOR: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// A random small conv/pool/dense classifier with at most 10⁴ parameters.
pub fn random_spec(rng: &mut ChaCha8Rng) -> NetworkSpec {
    loop {
        let channels = rng.random_range(1..=2);
        let extent = [rng.random_range(4..=8), rng.random_range(4..=8), rng.random_range(4..=8)];
        let classes = rng.random_range(2..=3);
        let mut layers = vec![];
        let (k, pad) = if rng.random_bool(0.7) { (3, 1) } else { (2, 0) };
        let stride = if rng.random_bool(0.8) { 1 } else { 2 };
        layers.push(Layer::conv(rng.random_range(2..=4), k, stride, pad));
        layers.push(Layer::Relu);
        layers.push(Layer::pool(2, 2));
        if rng.random_bool(0.5) {
            layers.push(Layer::conv(rng.random_range(2..=6), 3, 1, 1));
            layers.push(Layer::Relu);
        }
        layers.push(Layer::Flatten);
        if rng.random_bool(0.7) {
            layers.push(Layer::dense(rng.random_range(4..=12)));
            layers.push(Layer::Relu);
        }
        layers.push(Layer::dense(classes));
        let names = (0..classes).map(|c| format!("c{c}")).collect();
        let Ok(spec) = NetworkSpec::new(vec![channels, extent[0], extent[1], extent[2]], layers, names) else {
            continue;
        };
        if Network::zeros(spec.clone()).unwrap().num_parameters() <= 10_000 {
            return spec;
        }
    }
}

pub fn set_random_biases(net: &mut Network, rng: &mut ChaCha8Rng, scale: f64) {
    for p in net.params_mut() {
        let mut ts = p.tensors_mut();
        if ts.len() == 2 {
            for v in ts[1].data_mut() {
                *v = rng.random_range(-scale..scale);
            }
        }
    }
}

/// Random network; biases are left at zero unless `biases` is set.
pub fn random_network(rng: &mut ChaCha8Rng, biases: bool) -> Network {
    let spec = random_spec(rng);
    let mut net = init_network(spec, rng.random()).unwrap();
    if biases {
        set_random_biases(&mut net, rng, 0.1);
    }
    net
}

/// Batched random input for `net`.
pub fn random_input(rng: &mut ChaCha8Rng, net: &Network) -> Tensor {
    let mut shape = vec![1];
    shape.extend_from_slice(&net.spec().input_shape);
    random_tensor(rng, &shape)
}

pub fn layer_forward(layer: &Layer, params: &LayerParams, x: &Tensor) -> (Tensor, Option<Argmax>) {
    match (layer, params) {
        (Layer::Conv3d { .. }, LayerParams::Conv(p)) => (conv3d_forward(x, p).unwrap(), None),
        (Layer::Dense { .. }, LayerParams::Dense(p)) => (dense_forward(x, &p.weights, &p.bias).unwrap(), None),
        (Layer::Relu, _) => (relu_forward(x), None),
        (Layer::MaxPool3d { window, stride }, _) => {
            let (y, a) = maxpool3d_forward(x, &PoolParams::new(*window, *stride).unwrap()).unwrap();
            (y, Some(a))
        }
        (Layer::Flatten, _) => (x.reshape(&[x.shape()[0], x.len() / x.shape()[0]]).unwrap(), None),
        _ => panic!("layer/params mismatch"),
    }
}

/// `(grad_input, grad_params)` for the scalar `<g, layer(x)>`.
pub fn layer_vjp(layer: &Layer, params: &LayerParams, x: &Tensor, g: &Tensor) -> (Tensor, Vec<Tensor>) {
    match (layer, params) {
        (Layer::Conv3d { .. }, LayerParams::Conv(p)) => {
            let gr = conv3d_backward(x, p, g).unwrap();
            (gr.input, vec![gr.kernels, gr.bias])
        }
        (Layer::Dense { .. }, LayerParams::Dense(p)) => {
            let (gi, gw, gb) = dense_backward(x, &p.weights, &p.bias, g).unwrap();
            (gi, vec![gw, gb])
        }
        (Layer::Relu, _) => (relu_backward(x, g).unwrap(), vec![]),
        (Layer::MaxPool3d { .. }, _) => {
            let (_, arg) = layer_forward(layer, params, x);
            (maxpool3d_backward(&arg.unwrap(), g, x.shape()).unwrap(), vec![])
        }
        (Layer::Flatten, _) => (g.reshape(x.shape()).unwrap(), vec![]),
        _ => panic!("layer/params mismatch"),
    }
}

pub fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// ReLU sign pattern and pooling winners along a forward pass: the piece of
/// the piecewise-linear network that `x` lies in.
pub fn activation_pattern(net: &Network, x: &Tensor) -> (Vec<bool>, Vec<usize>) {
    let (_, trace) = net.forward(x).unwrap();
    let mut signs = vec![];
    let mut winners = vec![];
    for (i, layer) in net.spec().layers.iter().enumerate() {
        match layer {
            Layer::Relu => signs.extend(trace.activations[i].data().iter().map(|&v| v > 0.0)),
            Layer::MaxPool3d { .. } => winners.extend(trace.argmax[i].as_ref().unwrap().iter().copied()),
            _ => {}
        }
    }
    (signs, winners)
}

/// Smallest distance of any ReLU input to zero and any pooling window's
/// winner to its runner-up.
pub fn kink_margin(net: &Network, x: &Tensor) -> f64 {
    let (_, trace) = net.forward(x).unwrap();
    let mut margin = f64::INFINITY;
    for (i, layer) in net.spec().layers.iter().enumerate() {
        let input = &trace.activations[i];
        match layer {
            Layer::Relu => {
                margin = input.data().iter().fold(margin, |m, v| m.min(v.abs()));
            }
            Layer::MaxPool3d { window, stride } => {
                let out = &trace.activations[i + 1];
                margin = margin.min(pool_gap(input, out, *window, *stride));
            }
            _ => {}
        }
    }
    margin
}

fn pool_gap(input: &Tensor, out: &Tensor, window: [usize; 3], stride: [usize; 3]) -> f64 {
    let s = input.shape();
    let o = out.shape();
    let mut gap = f64::INFINITY;
    for n in 0..s[0] * s[1] {
        for od in 0..o[2] {
            for oh in 0..o[3] {
                for ow in 0..o[4] {
                    let mut vals = vec![];
                    for a in 0..window[0] {
                        for b in 0..window[1] {
                            for c in 0..window[2] {
                                let (z, y, x) = (od * stride[0] + a, oh * stride[1] + b, ow * stride[2] + c);
                                vals.push(input.data()[((n * s[2] + z) * s[3] + y) * s[4] + x]);
                            }
                        }
                    }
                    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
                    if vals.len() > 1 {
                        gap = gap.min(vals[0] - vals[1]);
                    }
                }
            }
        }
    }
    gap
}

pub fn target_logit(net: &Network, x: &Tensor, target: usize) -> f64 {
    net.forward(x).unwrap().0.data()[target]
}
