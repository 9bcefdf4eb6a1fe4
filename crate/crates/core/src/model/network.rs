use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::spec::{infer_shapes, Layer, NetworkSpec};
use crate::ops::{
    conv3d_backward_input, conv3d_backward_params, conv3d_forward, dense_backward, dense_backward_input,
    dense_forward, maxpool3d_backward, maxpool3d_forward, relu_backward, relu_backward_guided,
    relu_forward, softmax, Argmax, ConvParams, DenseParams, PoolParams,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    None,
    Conv(ConvParams),
    Dense(DenseParams),
}

impl LayerParams {
    /// Parameter tensors in serialization order (kernels/weights before biases).
    pub fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            LayerParams::None => vec![],
            LayerParams::Conv(p) => vec![("kernels", &p.kernels), ("bias", &p.bias)],
            LayerParams::Dense(p) => vec![("weights", &p.weights), ("bias", &p.bias)],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            LayerParams::None => vec![],
            LayerParams::Conv(p) => vec![&mut p.kernels, &mut p.bias],
            LayerParams::Dense(p) => vec![&mut p.weights, &mut p.bias],
        }
    }
}

/// A network spec together with its instantiated parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    params: Vec<LayerParams>,
}

/// Shapes `(name, shape)` of every parameter tensor of every layer, in order.
/// `(name, shape)` of each parameter tensor of one layer.
pub(crate) type ParamShapes = Vec<(&'static str, Vec<usize>)>;

pub(crate) fn param_shapes(spec: &NetworkSpec) -> Result<Vec<ParamShapes>> {
    let table = infer_shapes(spec)?;
    Ok(spec
        .layers
        .iter()
        .zip(&table)
        .map(|(layer, shapes)| match layer {
            Layer::Conv3d {
                out_channels, kernel, ..
            } => vec![
                (
                    "kernels",
                    vec![*out_channels, shapes.input[0], kernel[0], kernel[1], kernel[2]],
                ),
                ("bias", vec![*out_channels]),
            ],
            Layer::Dense { out_features } => vec![
                ("weights", vec![*out_features, shapes.input[0]]),
                ("bias", vec![*out_features]),
            ],
            _ => vec![],
        })
        .collect())
}

impl Network {
    /// Assembles a network from per-layer parameter tensors, checking every shape.
    pub fn from_tensors(spec: NetworkSpec, mut tensors: Vec<Vec<Tensor>>) -> Result<Self> {
        let shapes = param_shapes(&spec)?;
        if tensors.len() != spec.layers.len() {
            return Err(Error::SpecMismatch(format!(
                "{} layers in spec, {} parameter groups",
                spec.layers.len(),
                tensors.len()
            )));
        }
        let mut params = Vec::with_capacity(spec.layers.len());
        for (i, layer) in spec.layers.iter().enumerate() {
            let group = std::mem::take(&mut tensors[i]);
            if group.len() != shapes[i].len() {
                return Err(Error::SpecMismatch(format!("layer {i}: wrong number of parameter tensors")));
            }
            for (t, (name, shape)) in group.iter().zip(&shapes[i]) {
                if t.shape() != shape.as_slice() {
                    return Err(Error::SpecMismatch(format!(
                        "layer {i} {name}: expected {shape:?}, found {:?}",
                        t.shape()
                    )));
                }
                t.check_finite("network parameters")?;
            }
            let mut it = group.into_iter();
            params.push(match layer {
                Layer::Conv3d { stride, pad, .. } => {
                    let (k, b) = (it.next().unwrap(), it.next().unwrap());
                    LayerParams::Conv(ConvParams::new(k, b, *stride, *pad)?)
                }
                Layer::Dense { .. } => {
                    let (w, b) = (it.next().unwrap(), it.next().unwrap());
                    LayerParams::Dense(DenseParams::new(w, b)?)
                }
                _ => LayerParams::None,
            });
        }
        Ok(Network { spec, params })
    }

    /// All parameters zero.
    pub fn zeros(spec: NetworkSpec) -> Result<Self> {
        let tensors = param_shapes(&spec)?
            .into_iter()
            .map(|group| group.into_iter().map(|(_, s)| Tensor::zeros(&s)).collect())
            .collect();
        Self::from_tensors(spec, tensors)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [LayerParams] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params
            .iter()
            .flat_map(|p| p.tensors())
            .map(|(_, t)| t.len())
            .sum()
    }

    /// Adds a batch axis to an unbatched input; validates the per-sample shape.
    fn batched(&self, input: &Tensor) -> Result<Tensor> {
        let want = &self.spec.input_shape;
        if input.shape() == want.as_slice() {
            let mut shape = vec![1];
            shape.extend_from_slice(want);
            return input.reshape(&shape);
        }
        if input.rank() == want.len() + 1 && &input.shape()[1..] == want.as_slice() {
            return Ok(input.clone());
        }
        Err(Error::mismatch(
            "forward",
            "input shape",
            format!("{want:?} or [batch, ..]"),
            format!("{:?}", input.shape()),
        ))
    }

    /// Logits `(batch, classes)` plus every intermediate tensor.
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ActivationTrace)> {
        let x = self.batched(input)?;
        x.check_finite("forward input")?;
        let mut activations = Vec::with_capacity(self.spec.layers.len() + 1);
        let mut argmax = Vec::with_capacity(self.spec.layers.len());
        activations.push(x);
        for (i, (layer, params)) in self.spec.layers.iter().zip(&self.params).enumerate() {
            let cur = activations.last().unwrap();
            let (next, arg) = match (layer, params) {
                (Layer::Conv3d { .. }, LayerParams::Conv(p)) => (conv3d_forward(cur, p)?, None),
                (Layer::Dense { .. }, LayerParams::Dense(p)) => (dense_forward(cur, &p.weights, &p.bias)?, None),
                (Layer::Relu, _) => (relu_forward(cur), None),
                (Layer::MaxPool3d { window, stride }, _) => {
                    let (y, a) = maxpool3d_forward(cur, &PoolParams::new(*window, *stride)?)?;
                    (y, Some(a))
                }
                (Layer::Flatten, _) => {
                    let b = cur.shape()[0];
                    (cur.reshape(&[b, cur.len() / b])?, None)
                }
                _ => {
                    return Err(Error::InvalidSpec {
                        layer: Some(i),
                        msg: "parameters do not match layer kind".into(),
                    })
                }
            };
            next.check_finite(&format!("activation of layer {i} ({})", layer.kind()))?;
            activations.push(next);
            argmax.push(arg);
        }
        let logits = activations.last().unwrap().clone();
        Ok((logits, ActivationTrace { activations, argmax }))
    }

    /// Reverse pass from a logit cotangent `(batch, classes)`.
    pub fn backward(&self, trace: &ActivationTrace, grad_logits: &Tensor, opts: BackwardOptions) -> Result<Backward> {
        let n = self.spec.layers.len();
        if trace.activations.len() != n + 1 {
            return Err(Error::mismatch("backward", "trace length", n + 1, trace.activations.len()));
        }
        if grad_logits.shape() != trace.logits().shape() {
            return Err(Error::mismatch(
                "backward",
                "grad_logits",
                format!("{:?}", trace.logits().shape()),
                format!("{:?}", grad_logits.shape()),
            ));
        }
        let mut grad = grad_logits.clone();
        let mut param_grads = vec![ParamGrads::None; if opts.param_grads { n } else { 0 }];
        let mut relu_grads = Vec::new();
        for i in (0..n).rev() {
            let input = &trace.activations[i];
            grad = match (&self.spec.layers[i], &self.params[i]) {
                (Layer::Conv3d { .. }, LayerParams::Conv(p)) => {
                    if opts.param_grads {
                        let (k, b) = conv3d_backward_params(input, p, &grad)?;
                        param_grads[i] = ParamGrads::Conv { kernels: k, bias: b };
                    }
                    conv3d_backward_input(input, p, &grad)?
                }
                (Layer::Dense { .. }, LayerParams::Dense(p)) => {
                    if opts.param_grads {
                        let (gi, w, b) = dense_backward(input, &p.weights, &p.bias, &grad)?;
                        param_grads[i] = ParamGrads::Dense { weights: w, bias: b };
                        gi
                    } else {
                        dense_backward_input(&p.weights, &grad)?
                    }
                }
                (Layer::Relu, _) => {
                    let g = match opts.relu {
                        ReluGate::Standard => relu_backward(input, &grad)?,
                        ReluGate::Guided => relu_backward_guided(input, &grad)?,
                    };
                    if opts.record_relu {
                        relu_grads.push((i, g.clone()));
                    }
                    g
                }
                (Layer::MaxPool3d { .. }, _) => {
                    let arg = trace.argmax[i].as_ref().ok_or_else(|| Error::InvalidSpec {
                        layer: Some(i),
                        msg: "trace lacks pooling argmax".into(),
                    })?;
                    maxpool3d_backward(arg, &grad, input.shape())?
                }
                (Layer::Flatten, _) => grad.into_reshaped(input.shape())?,
                _ => {
                    return Err(Error::InvalidSpec {
                        layer: Some(i),
                        msg: "parameters do not match layer kind".into(),
                    })
                }
            };
        }
        relu_grads.reverse();
        Ok(Backward {
            input: grad,
            params: param_grads,
            relu_grads,
        })
    }

    /// Class with the highest probability; ties go to the smallest index.
    pub fn predict(&self, input: &Tensor) -> Result<Prediction> {
        let x = self.batched(input)?;
        if x.shape()[0] != 1 {
            return Err(Error::shape("predict", "expects a single volume"));
        }
        let (logits, _) = self.forward(&x)?;
        Ok(self.prediction_from_logits(&logits)?.remove(0))
    }

    pub fn prediction_from_logits(&self, logits: &Tensor) -> Result<Vec<Prediction>> {
        let probs = softmax(logits)?;
        let k = self.spec.num_classes();
        Ok(probs
            .data()
            .chunks(k)
            .map(|row| {
                let row = Tensor::from_parts(vec![k], row.to_vec());
                let class_index = row.argmax();
                Prediction {
                    class_index,
                    class_name: self.spec.class_names[class_index].clone(),
                    probabilities: row.into_data(),
                }
            })
            .collect())
    }
}

/// Kaiming-style fan-in scaled uniform weights (variance 2/fan_in), zero biases.
pub fn init_network(spec: NetworkSpec, rng_seed: u64) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let tensors = param_shapes(&spec)?
        .into_iter()
        .map(|group| {
            group
                .into_iter()
                .map(|(name, shape)| {
                    if name == "bias" {
                        return Tensor::zeros(&shape);
                    }
                    let fan_in: usize = shape[1..].iter().product();
                    let bound = (6.0 / fan_in as f64).sqrt();
                    Tensor::from_fn(&shape, |_| rng.random_range(-bound..bound))
                })
                .collect()
        })
        .collect();
    Network::from_tensors(spec, tensors)
}

/// Every intermediate of one forward pass. `activations[0]` is the batched
/// input, `activations[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct ActivationTrace {
    pub activations: Vec<Tensor>,
    /// Pooling argmax per layer, `None` for non-pooling layers.
    pub argmax: Vec<Option<Argmax>>,
}

impl ActivationTrace {
    pub fn logits(&self) -> &Tensor {
        self.activations.last().expect("trace is never empty")
    }

    pub fn layer_input(&self, layer: usize) -> &Tensor {
        &self.activations[layer]
    }

    pub fn layer_output(&self, layer: usize) -> &Tensor {
        &self.activations[layer + 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReluGate {
    /// Ordinary ReLU derivative.
    Standard,
    /// Guided backpropagation: negative incoming gradients are also zeroed.
    Guided,
}

#[derive(Debug, Clone, Copy)]
pub struct BackwardOptions {
    pub relu: ReluGate,
    pub param_grads: bool,
    /// Keep the tensor leaving every ReLU backward (after gating).
    pub record_relu: bool,
}

impl BackwardOptions {
    pub fn input_only(relu: ReluGate) -> Self {
        BackwardOptions {
            relu,
            param_grads: false,
            record_relu: false,
        }
    }

    pub fn training() -> Self {
        BackwardOptions {
            relu: ReluGate::Standard,
            param_grads: true,
            record_relu: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamGrads {
    None,
    Conv { kernels: Tensor, bias: Tensor },
    Dense { weights: Tensor, bias: Tensor },
}

impl ParamGrads {
    pub fn tensors(&self) -> Vec<&Tensor> {
        match self {
            ParamGrads::None => vec![],
            ParamGrads::Conv { kernels, bias } => vec![kernels, bias],
            ParamGrads::Dense { weights, bias } => vec![weights, bias],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Backward {
    /// Gradient with respect to the batched input.
    pub input: Tensor,
    /// One entry per layer when parameter gradients were requested, else empty.
    pub params: Vec<ParamGrads>,
    /// `(layer index, gated gradient)` for every ReLU, in layer order, when recorded.
    pub relu_grads: Vec<(usize, Tensor)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class_index: usize,
    pub class_name: String,
    pub probabilities: Vec<f64>,
}
