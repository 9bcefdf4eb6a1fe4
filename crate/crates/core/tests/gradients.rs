mod common;

use proptest::prelude::*;
use rand::Rng;

use common::*;
use voxrel::attribution::sensitivity_map;
use voxrel::model::{init_network, train, Layer, LayerParams, Network, NetworkSpec, Sample, TrainConfig};
use voxrel::ops::{softmax, ConvParams};
use voxrel::Tensor;

fn conv_layer(out: usize, k: [usize; 3], stride: [usize; 3], pad: [usize; 3]) -> Layer {
    Layer::Conv3d {
        out_channels: out,
        kernel: k,
        stride,
        pad,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn conv_backward_matches_finite_differences(
        seed in any::<u64>(),
        ic in 1usize..3,
        oc in 1usize..4,
        k in prop::array::uniform3(1usize..4),
        stride in prop::array::uniform3(1usize..3),
        pad in prop::array::uniform3(0usize..2),
        extent in prop::array::uniform3(3usize..6),
    ) {
        let mut r = rng(seed);
        let kernels = random_tensor(&mut r, &[oc, ic, k[0], k[1], k[2]]);
        let bias = random_tensor(&mut r, &[oc]);
        let p = ConvParams::new(kernels, bias, stride, pad).unwrap();
        let layer = conv_layer(oc, k, stride, pad);
        let params = LayerParams::Conv(p);
        let x = random_tensor(&mut r, &[2, ic, extent[0], extent[1], extent[2]]);
        let (y, _) = layer_forward(&layer, &params, &x);
        let g = random_tensor(&mut r, y.shape());
        let (gi, gp) = layer_vjp(&layer, &params, &x, &g);
        let loss = |t: &Tensor, p: &LayerParams| dot(&g, &layer_forward(&layer, p, t).0);
        for _ in 0..5 {
            let j = r.random_range(0..x.len());
            let (mut a, mut b) = (x.clone(), x.clone());
            a.data_mut()[j] += FD_STEP;
            b.data_mut()[j] -= FD_STEP;
            let fd = (loss(&a, &params) - loss(&b, &params)) / (2.0 * FD_STEP);
            prop_assert!(rel_err(gi.data()[j], fd) <= 1e-6);
        }
        for (t, g) in gp.iter().enumerate() {
            let j = r.random_range(0..g.len());
            let shifted = |d: f64| {
                let mut p = params.clone();
                p.tensors_mut()[t].data_mut()[j] += d;
                loss(&x, &p)
            };
            let fd = (shifted(FD_STEP) - shifted(-FD_STEP)) / (2.0 * FD_STEP);
            prop_assert!(rel_err(g.data()[j], fd) <= 1e-6);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_ignore_shifts(
        logits in prop::collection::vec(-30.0f64..30.0, 6),
        shift in -100.0f64..100.0,
    ) {
        let t = Tensor::new(vec![2, 3], logits).unwrap();
        let p = softmax(&t).unwrap();
        for row in p.data().chunks(3) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        let q = softmax(&t.map(|v| v + shift)).unwrap();
        for (a, b) in p.data().iter().zip(q.data()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn prediction_ignores_constant_logit_shift(seed in any::<u64>(), shift in -50.0f64..50.0) {
        let mut r = rng(seed);
        let net = random_network(&mut r, true);
        let x = random_input(&mut r, &net);
        let (logits, _) = net.forward(&x).unwrap();
        let a = net.prediction_from_logits(&logits).unwrap();
        let b = net.prediction_from_logits(&logits.map(|v| v + shift)).unwrap();
        prop_assert_eq!(a[0].class_index, b[0].class_index);
    }
}

#[test]
fn desk_sensitivity_matches_per_voxel_differences() {
    let mut r = rng(17);
    let mut net = init_network(NetworkSpec::desk_default(&["CN", "MCI", "AD"]), 5).unwrap();
    set_random_biases(&mut net, &mut r, 0.05);
    let x = random_tensor(&mut r, &[16, 16, 16]);
    let batched = x.reshape(&[1, 1, 16, 16, 16]).unwrap();
    let map = sensitivity_map(&net, &x, 2).unwrap();
    let pattern = activation_pattern(&net, &batched);
    let mut checked = 0;
    while checked < 20 {
        let j = r.random_range(0..x.len());
        let (mut a, mut b) = (batched.clone(), batched.clone());
        a.data_mut()[j] += FD_STEP;
        b.data_mut()[j] -= FD_STEP;
        if activation_pattern(&net, &a) != pattern || activation_pattern(&net, &b) != pattern {
            continue;
        }
        let fd = (target_logit(&net, &a, 2) - target_logit(&net, &b, 2)) / (2.0 * FD_STEP);
        assert!(rel_err(map.values.data()[j], fd) <= 1e-5, "voxel {j}");
        checked += 1;
    }
}

#[test]
fn forward_is_identical_across_thread_counts() {
    let mut r = rng(3);
    let net = init_network(NetworkSpec::desk_default(&["CN", "AD"]), 1).unwrap();
    let x = random_tensor(&mut r, &[4, 1, 16, 16, 16]);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| net.forward(&x).unwrap().0)
    };
    let one = run(1);
    for threads in [2, 4] {
        let other = run(threads);
        assert!(one.data().iter().zip(other.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn single_sample_overfits() {
    let mut r = rng(8);
    let net = init_network(NetworkSpec::desk_default(&["CN", "MCI", "AD"]), 2).unwrap();
    let sample = Sample {
        volume: random_tensor(&mut r, &[1, 16, 16, 16]),
        label: 1,
    };
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        decay_period_epochs: 1000,
        batch_size: 1,
        epochs: 200,
        ..Default::default()
    };
    let (_, metrics) = train(&net, &[sample], &cfg).unwrap();
    assert!(metrics.last().unwrap().loss < 0.01, "final loss {}", metrics.last().unwrap().loss);
}

#[test]
fn metrics_report_the_schedule() {
    let mut r = rng(4);
    let spec = NetworkSpec::new(vec![8], vec![Layer::dense(2)], vec!["a".into(), "b".into()]).unwrap();
    let net = Network::zeros(spec).unwrap();
    let data: Vec<Sample> = (0..4)
        .map(|i| Sample {
            volume: random_tensor(&mut r, &[8]),
            label: i % 2,
        })
        .collect();
    let cfg = TrainConfig {
        epochs: 22,
        batch_size: 2,
        ..Default::default()
    };
    let (_, metrics) = train(&net, &data, &cfg).unwrap();
    let mut expected = cfg.learning_rate;
    for m in &metrics {
        if m.epoch > 0 && m.epoch % 7 == 0 {
            expected *= 0.1;
        }
        assert!((m.learning_rate - expected).abs() <= 1e-12 * expected, "epoch {}", m.epoch);
    }
}
