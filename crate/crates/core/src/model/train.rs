//! Mini-batch SGD on cross-entropy with a step learning-rate schedule.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::network::{BackwardOptions, LayerParams, Network};
use crate::ops::softmax_cross_entropy;
use crate::tensor::Tensor;

/// One labeled volume with the network's per-sample input shape.
#[derive(Debug, Clone)]
pub struct Sample {
    pub volume: Tensor,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate every `decay_period_epochs`.
    pub lr_decay_factor: f64,
    pub decay_period_epochs: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub rng_seed: u64,
    /// Optional L2 penalty on kernels and dense weights (not biases).
    pub l2_weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            lr_decay_factor: 0.1,
            decay_period_epochs: 7,
            batch_size: 16,
            epochs: 30,
            rng_seed: 0,
            l2_weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    /// `base · factor^⌊epoch / period⌋`, epochs counted from zero.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay_factor.powi((epoch / self.decay_period_epochs) as i32)
    }

    fn validate(&self, dataset_len: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad("lr_decay_factor must be in (0, 1]");
        }
        if self.decay_period_epochs == 0 {
            return bad("decay_period_epochs must be positive");
        }
        if self.batch_size == 0 || self.batch_size > dataset_len {
            return Err(Error::InvalidParameter(format!(
                "batch_size must be in 1..={dataset_len}, got {}",
                self.batch_size
            )));
        }
        if !(self.l2_weight_decay >= 0.0 && self.l2_weight_decay.is_finite()) {
            return bad("l2_weight_decay must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean training cross-entropy over the epoch.
    pub loss: f64,
    /// Training accuracy measured on the fly during the epoch.
    pub accuracy: f64,
    pub val_accuracy: Option<f64>,
}

fn check_dataset(net: &Network, data: &[Sample], what: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty(format!("{what} dataset")));
    }
    let k = net.spec().num_classes();
    for s in data {
        if s.label >= k {
            return Err(Error::LabelOutOfRange {
                context: "dataset",
                label: s.label,
                classes: k,
            });
        }
        if s.volume.shape() != net.spec().input_shape.as_slice() {
            return Err(Error::mismatch(
                "dataset",
                "volume shape",
                format!("{:?}", net.spec().input_shape),
                format!("{:?}", s.volume.shape()),
            ));
        }
    }
    Ok(())
}

fn stack(data: &[Sample], idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
    let vols: Vec<&Tensor> = idx.iter().map(|&i| &data[i].volume).collect();
    Ok((Tensor::stack(&vols)?, idx.iter().map(|&i| data[i].label).collect()))
}

pub fn train(net: &Network, data: &[Sample], cfg: &TrainConfig) -> Result<(Network, Vec<EpochMetrics>)> {
    train_with_validation(net, data, None, cfg)
}

/// Trains a private copy of `net`; shuffling is driven only by `cfg.rng_seed`.
pub fn train_with_validation(
    net: &Network,
    data: &[Sample],
    val: Option<&[Sample]>,
    cfg: &TrainConfig,
) -> Result<(Network, Vec<EpochMetrics>)> {
    check_dataset(net, data, "training")?;
    if let Some(v) = val {
        check_dataset(net, v, "validation")?;
    }
    cfg.validate(data.len())?;
    let mut net = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for (batch_no, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (x, labels) = stack(data, idx)?;
            let (logits, trace) = net.forward(&x)?;
            let (loss, probs, grad) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("training loss at epoch {epoch}, batch {batch_no}"),
                });
            }
            loss_sum += loss * idx.len() as f64;
            let k = net.spec().num_classes();
            for (row, &l) in probs.data().chunks(k).zip(&labels) {
                if Tensor::from_parts(vec![k], row.to_vec()).argmax() == l {
                    correct += 1;
                }
            }
            let back = net.backward(&trace, &grad, BackwardOptions::training())?;
            sgd_step(&mut net, &back.params, lr, cfg.l2_weight_decay);
            for params in net.params() {
                for (_, t) in params.tensors() {
                    t.check_finite(&format!("parameters after epoch {epoch}, batch {batch_no}"))?;
                }
            }
        }
        let val_accuracy = match val {
            Some(v) => Some(evaluate(&net, v)?.accuracy),
            None => None,
        };
        metrics.push(EpochMetrics {
            epoch,
            learning_rate: lr,
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
            val_accuracy,
        });
    }
    Ok((net, metrics))
}

fn sgd_step(net: &mut Network, grads: &[crate::model::network::ParamGrads], lr: f64, l2: f64) {
    for (params, g) in net.params_mut().iter_mut().zip(grads) {
        if matches!(params, LayerParams::None) {
            continue;
        }
        for (i, (p, g)) in params.tensors_mut().into_iter().zip(g.tensors()).enumerate() {
            // index 0 is the kernel/weight tensor, index 1 the bias
            let decay = if i == 0 { l2 } else { 0.0 };
            for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
                *w -= lr * (d + decay * *w);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<usize>,
}

/// Confusion counts and accuracy from parallel label/prediction lists.
pub fn confusion_from_predictions(labels: &[usize], predictions: &[usize], classes: usize) -> Evaluation {
    let mut confusion = vec![vec![0; classes]; classes];
    for (&l, &p) in labels.iter().zip(predictions) {
        confusion[l][p] += 1;
    }
    let hits: usize = (0..classes).map(|c| confusion[c][c]).sum();
    Evaluation {
        accuracy: hits as f64 / labels.len().max(1) as f64,
        confusion,
        predictions: predictions.to_vec(),
    }
}

pub fn evaluate(net: &Network, data: &[Sample]) -> Result<Evaluation> {
    check_dataset(net, data, "evaluation")?;
    let all: Vec<usize> = (0..data.len()).collect();
    let mut predictions = Vec::with_capacity(data.len());
    for idx in all.chunks(16) {
        let (x, _) = stack(data, idx)?;
        let (logits, _) = net.forward(&x)?;
        predictions.extend(net.prediction_from_logits(&logits)?.into_iter().map(|p| p.class_index));
    }
    let labels: Vec<usize> = data.iter().map(|s| s.label).collect();
    Ok(confusion_from_predictions(&labels, &predictions, net.spec().num_classes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::network::init_network;
    use crate::model::spec::{Layer, NetworkSpec};
    use rand::Rng;

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec::new(
            vec![1, 4, 4, 4],
            vec![
                Layer::conv(2, 3, 1, 1),
                Layer::Relu,
                Layer::pool(2, 2),
                Layer::Flatten,
                Layer::dense(3),
            ],
            vec!["CN".into(), "MCI".into(), "AD".into()],
        )
        .unwrap()
    }

    fn random_samples(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| Sample {
                volume: Tensor::from_fn(&[1, 4, 4, 4], |_| rng.random_range(-1.0..1.0)),
                label: i % 3,
            })
            .collect()
    }

    #[test]
    fn default_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate, 0.0001);
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.learning_rate_at(0), 1e-4);
        assert_eq!(cfg.learning_rate_at(6), 1e-4);
        // eighth epoch (index 7) is the first decayed one
        assert!((cfg.learning_rate_at(7) - 1e-5).abs() < 1e-20);
        assert!((cfg.learning_rate_at(14) - 1e-6).abs() < 1e-21);
    }

    #[test]
    fn zero_epochs_is_identity() {
        let net = init_network(tiny_spec(), 1).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let (out, m) = train(&net, &random_samples(4, 2), &cfg).unwrap();
        assert_eq!(out, net);
        assert!(m.is_empty());
    }

    #[test]
    fn same_seed_same_result() {
        let net = init_network(tiny_spec(), 1).unwrap();
        let data = random_samples(9, 3);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            learning_rate: 0.05,
            rng_seed: 7,
            ..TrainConfig::default()
        };
        let (a, ma) = train(&net, &data, &cfg).unwrap();
        let (b, mb) = train(&net, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        let (c, _) = train(&net, &data, &TrainConfig { rng_seed: 8, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_inputs() {
        let net = init_network(tiny_spec(), 1).unwrap();
        assert_eq!(train(&net, &[], &TrainConfig::default()).unwrap_err().code(), "empty");
        let mut data = random_samples(4, 1);
        let cfg = TrainConfig {
            batch_size: 2,
            ..TrainConfig::default()
        };
        data[0].label = 5;
        assert_eq!(train(&net, &data, &cfg).unwrap_err().code(), "label-range");
        assert_eq!(
            train(&net, &random_samples(4, 1), &TrainConfig::default()).unwrap_err().code(),
            "parameter"
        );
    }

    #[test]
    fn l2_shrinks_weights_without_gradient() {
        let net = init_network(tiny_spec(), 1).unwrap();
        let mut zero_grads = vec![];
        for p in net.params() {
            zero_grads.push(match p {
                LayerParams::None => crate::model::network::ParamGrads::None,
                LayerParams::Conv(c) => crate::model::network::ParamGrads::Conv {
                    kernels: Tensor::zeros(c.kernels.shape()),
                    bias: Tensor::zeros(c.bias.shape()),
                },
                LayerParams::Dense(d) => crate::model::network::ParamGrads::Dense {
                    weights: Tensor::zeros(d.weights.shape()),
                    bias: Tensor::zeros(d.bias.shape()),
                },
            });
        }
        let mut shrunk = net.clone();
        sgd_step(&mut shrunk, &zero_grads, 0.5, 0.1);
        if let (LayerParams::Conv(a), LayerParams::Conv(b)) = (&net.params()[0], &shrunk.params()[0]) {
            for (x, y) in a.kernels.data().iter().zip(b.kernels.data()) {
                assert_eq!(*y, x - 0.5 * 0.1 * x);
            }
        }
    }

    #[test]
    fn evaluation_examples() {
        let e = confusion_from_predictions(&[0, 1, 2, 0, 1, 2, 0, 1, 2, 0], &[0, 1, 2, 0, 1, 2, 0, 1, 2, 0], 3);
        assert_eq!(e.accuracy, 1.0);
        assert_eq!(e.confusion, vec![vec![4, 0, 0], vec![0, 3, 0], vec![0, 0, 3]]);
        let e = confusion_from_predictions(&[0, 0, 1, 1, 2, 2], &[1; 6], 3);
        assert!((e.accuracy - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn constant_predictor_on_balanced_set() {
        // zero weights and a bias favoring class 1 make every prediction 1
        let mut net = crate::model::network::Network::zeros(tiny_spec()).unwrap();
        if let LayerParams::Dense(d) = &mut net.params_mut()[4] {
            d.bias.data_mut()[1] = 1.0;
        }
        let e = evaluate(&net, &random_samples(9, 4)).unwrap();
        assert!((e.accuracy - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(e.confusion.iter().map(|r| r[1]).sum::<usize>(), 9);
    }

    #[test]
    fn evaluate_matches_per_sample_loop() {
        let net = init_network(tiny_spec(), 11).unwrap();
        let data = random_samples(23, 12);
        let e = evaluate(&net, &data).unwrap();
        let mut hits = 0;
        for s in &data {
            if net.predict(&s.volume).unwrap().class_index == s.label {
                hits += 1;
            }
        }
        assert_eq!(e.accuracy, hits as f64 / 23.0);
    }
}
