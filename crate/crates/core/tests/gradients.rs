//! Reverse-mode gradients against central finite differences.

use fedskew_core::nn::gradcheck::check_gradients;
use fedskew_core::nn::{backward, build_model, class_weights, Arch, CategoryWeights, Layer};
use fedskew_core::rng;
use fedskew_core::Tensor;
use rand::Rng;

const H: f64 = 1e-5;
const TOLERANCE: f64 = 1e-6;
const SEEDS: u64 = 10;

fn batch(n: usize, extent: [usize; 3], seed: u64) -> Tensor {
    let mut r = rng::rng(seed);
    let len = n * extent.iter().product::<usize>();
    let data = (0..len).map(|_| r.random_range(-1.0..1.0)).collect();
    Tensor::new(vec![n, extent[0], extent[1], extent[2]], data).unwrap()
}

fn labels(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut r = rng::rng(seed ^ 0xa5a5);
    (0..n).map(|_| r.random_range(0..k)).collect()
}

fn check(arch: &Arch, n: usize, weights: &CategoryWeights, name: &str) {
    for seed in 0..SEEDS {
        let model = build_model(arch, seed).unwrap();
        let x = batch(n, arch.input, 100 + seed);
        let y = labels(n, arch.num_classes, seed);
        let report = check_gradients(&model, &x, &y, weights, H).unwrap();
        assert!(
            report.max_rel_error < TOLERANCE,
            "{name} seed {seed}: relative error {} at parameter {}",
            report.max_rel_error,
            report.worst
        );
        assert!(
            report.checked > report.skipped.len(),
            "{name} seed {seed}: too many kink crossings"
        );
    }
}

fn uniform(k: usize) -> CategoryWeights {
    CategoryWeights::uniform(k)
}

#[test]
fn dense_layer() {
    let arch = Arch {
        input: [1, 2, 3],
        num_classes: 3,
        layers: vec![
            Layer::Flatten,
            Layer::Dense {
                in_features: 6,
                out_features: 3,
            },
        ],
    };
    check(&arch, 5, &uniform(3), "dense");
}

#[test]
fn conv_layer() {
    let arch = Arch {
        input: [2, 4, 4],
        num_classes: 3,
        layers: vec![
            Layer::Conv2d {
                in_channels: 2,
                out_channels: 3,
                kernel: 3,
                padding: 1,
            },
            Layer::Flatten,
            Layer::Dense {
                in_features: 48,
                out_features: 3,
            },
        ],
    };
    check(&arch, 3, &uniform(3), "conv");
}

#[test]
fn unpadded_conv_layer() {
    let arch = Arch {
        input: [1, 5, 5],
        num_classes: 2,
        layers: vec![
            Layer::Conv2d {
                in_channels: 1,
                out_channels: 2,
                kernel: 3,
                padding: 0,
            },
            Layer::Flatten,
            Layer::Dense {
                in_features: 18,
                out_features: 2,
            },
        ],
    };
    check(&arch, 3, &uniform(2), "conv pad 0");
}

#[test]
fn batch_norm_spatial() {
    let arch = Arch {
        input: [2, 3, 3],
        num_classes: 3,
        layers: vec![
            Layer::BatchNorm { channels: 2 },
            Layer::Flatten,
            Layer::Dense {
                in_features: 18,
                out_features: 3,
            },
        ],
    };
    check(&arch, 4, &uniform(3), "batch norm (spatial)");
}

#[test]
fn batch_norm_flat() {
    let arch = Arch {
        input: [1, 2, 3],
        num_classes: 3,
        layers: vec![
            Layer::Flatten,
            Layer::Dense {
                in_features: 6,
                out_features: 5,
            },
            Layer::BatchNorm { channels: 5 },
            Layer::Dense {
                in_features: 5,
                out_features: 3,
            },
        ],
    };
    check(&arch, 6, &uniform(3), "batch norm (flat)");
}

#[test]
fn relu_layer() {
    let arch = Arch {
        input: [1, 2, 3],
        num_classes: 3,
        layers: vec![
            Layer::Flatten,
            Layer::Dense {
                in_features: 6,
                out_features: 8,
            },
            Layer::Relu,
            Layer::Dense {
                in_features: 8,
                out_features: 3,
            },
        ],
    };
    check(&arch, 5, &uniform(3), "relu");
}

#[test]
fn max_pool_layer() {
    let arch = Arch {
        input: [1, 4, 4],
        num_classes: 2,
        layers: vec![
            Layer::Conv2d {
                in_channels: 1,
                out_channels: 2,
                kernel: 3,
                padding: 1,
            },
            Layer::MaxPool2d { size: 2 },
            Layer::Flatten,
            Layer::Dense {
                in_features: 8,
                out_features: 2,
            },
        ],
    };
    check(&arch, 3, &uniform(2), "max pool");
}

#[test]
fn weighted_loss() {
    let arch = Arch::mlp_no_bn([1, 3, 3], 6, 4);
    let weights = class_weights(&[100, 50, 25, 25]).unwrap();
    check(&arch, 6, &weights, "weighted loss");
}

#[test]
fn composed_tiny_conv() {
    let arch = Arch::tiny_conv([1, 8, 8], 4);
    check(&arch, 4, &uniform(4), "tiny-conv");
}

#[test]
fn composed_tiny_conv_weighted() {
    let arch = Arch::tiny_conv([1, 8, 8], 4);
    check(
        &arch,
        4,
        &class_weights(&[4, 2, 1, 1]).unwrap(),
        "tiny-conv weighted",
    );
}

#[test]
fn composed_mlp() {
    let arch = Arch::mlp([1, 4, 4], 10, 3);
    check(&arch, 5, &uniform(3), "mlp");
}

#[test]
fn ones_weights_match_plain_cross_entropy() {
    let arch = Arch::tiny_conv([1, 8, 8], 4);
    let model = build_model(&arch, 3).unwrap();
    let x = batch(4, arch.input, 9);
    let y = labels(4, 4, 9);
    let plain = backward(&model, &x, &y, &uniform(4)).unwrap();
    let ones = backward(&model, &x, &y, &CategoryWeights::new(vec![1.0; 4]).unwrap()).unwrap();
    assert_eq!(plain.gradient, ones.gradient);
    assert_eq!(plain.loss.to_bits(), ones.loss.to_bits());
}

#[test]
fn doubling_weight_of_only_present_category_doubles_gradient() {
    let arch = Arch::mlp_no_bn([1, 3, 3], 6, 3);
    let model = build_model(&arch, 5).unwrap();
    let x = batch(4, arch.input, 5);
    let y = vec![1; 4];
    let one = backward(
        &model,
        &x,
        &y,
        &CategoryWeights::new(vec![1.0, 1.5, 3.0]).unwrap(),
    )
    .unwrap();
    let two = backward(
        &model,
        &x,
        &y,
        &CategoryWeights::new(vec![1.0, 3.0, 3.0]).unwrap(),
    )
    .unwrap();
    for (a, b) in one.gradient.iter().zip(&two.gradient) {
        assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}
