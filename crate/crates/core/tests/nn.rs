mod common;

use certfed::data::{synth_dataset, SynthSpec};
use certfed::nn::{
    accuracy, serialize, softmax_t, train, Conv2d, ConvGeometry, Dense, Layer, Loss, Model, Target, TrainConfig,
};
use certfed::Tensor;
use common::{mlp, rng, uniform_vec};

fn worked_layer() -> Model {
    let d = Dense::new(2, 2, vec![2.0, 1.0, 1.0, -1.0], vec![0.0, 0.0]).unwrap();
    Model::new(vec![2], vec![Layer::Dense(d)]).unwrap()
}

#[test]
fn forward_worked_example() {
    let out = worked_layer().forward(&Tensor::vector(&[0.5, 0.5]).unwrap()).unwrap();
    assert_eq!(out.data(), &[1.5, 0.0]);
}

#[test]
fn identity_dense_passes_through() {
    let d = Dense::new(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], vec![0.0; 3]).unwrap();
    let m = Model::new(vec![3], vec![Layer::Dense(d)]).unwrap();
    let x = [0.3, -2.0, 7.5];
    assert_eq!(m.logits(&x), x.to_vec());
}

/// Dense matrix equivalent of a valid convolution, built index by index.
fn unrolled(g: &ConvGeometry, kernel: &[f64]) -> Vec<f64> {
    let (oh_n, ow_n) = (g.out_h(), g.out_w());
    let in_dim = g.in_channels * g.in_h * g.in_w;
    let out_dim = g.out_channels * oh_n * ow_n;
    let mut w = vec![0.0; out_dim * in_dim];
    for co in 0..g.out_channels {
        for oh in 0..oh_n {
            for ow in 0..ow_n {
                let row = (co * oh_n + oh) * ow_n + ow;
                for ci in 0..g.in_channels {
                    for kh in 0..g.kernel_h {
                        for kw in 0..g.kernel_w {
                            let ih = oh * g.stride_h + kh;
                            let iw = ow * g.stride_w + kw;
                            let col = (ci * g.in_h + ih) * g.in_w + iw;
                            let k = kernel[((co * g.in_channels + ci) * g.kernel_h + kh) * g.kernel_w + kw];
                            w[row * in_dim + col] += k;
                        }
                    }
                }
            }
        }
    }
    w
}

fn conv_matches_unrolled(g: ConvGeometry, seed: u64) {
    let mut r = rng(seed);
    let kernel = uniform_vec(&mut r, g.kernel_len(), -1.0, 1.0);
    let bias = uniform_vec(&mut r, g.out_channels, -1.0, 1.0);
    let conv = Conv2d::new(g, kernel.clone(), bias.clone()).unwrap();
    let out_dim = conv.out_dim();
    let in_dim = conv.in_dim();
    let per_channel = out_dim / g.out_channels;
    let full_bias: Vec<f64> = (0..out_dim).map(|o| bias[o / per_channel]).collect();
    let dense = Dense::new(in_dim, out_dim, unrolled(&g, &kernel), full_bias).unwrap();
    let shape = vec![g.in_channels, g.in_h, g.in_w];
    let a = Model::new(shape.clone(), vec![Layer::Conv2d(conv)]).unwrap();
    let b = Model::new(shape, vec![Layer::Dense(dense)]).unwrap();
    for _ in 0..5 {
        let x = uniform_vec(&mut r, in_dim, 0.0, 1.0);
        for (u, v) in a.logits(&x).iter().zip(b.logits(&x)) {
            assert!((u - v).abs() < 1e-12, "{u} vs {v}");
        }
    }
}

#[test]
fn conv_3x3_kernel_2x2_equals_unrolled() {
    conv_matches_unrolled(
        ConvGeometry {
            in_channels: 1,
            in_h: 3,
            in_w: 3,
            out_channels: 1,
            kernel_h: 2,
            kernel_w: 2,
            stride_w: 1,
            stride_h: 1,
        },
        1,
    );
}

#[test]
fn conv_strided_multichannel_equals_unrolled() {
    conv_matches_unrolled(
        ConvGeometry {
            in_channels: 2,
            in_h: 5,
            in_w: 6,
            out_channels: 3,
            kernel_h: 2,
            kernel_w: 3,
            stride_w: 3,
            stride_h: 1,
        },
        2,
    );
}

#[test]
fn softmax_examples() {
    let p = softmax_t(&Tensor::vector(&[0.0, 0.0]).unwrap(), 1.0).unwrap();
    assert_eq!(p.data(), &[0.5, 0.5]);

    let p = softmax_t(&Tensor::vector(&[10.0, 0.0]).unwrap(), 100.0).unwrap();
    let e = (0.1f64).exp();
    let want = e / (e + 1.0);
    assert!((p.data()[0] - want).abs() < 1e-15);
    assert!((p.data()[0] - 0.525).abs() < 1e-3);
    assert!((p.data()[1] - 0.475).abs() < 1e-3);

    let p = softmax_t(&Tensor::vector(&[10.0, 0.0]).unwrap(), 0.01).unwrap();
    assert_eq!(p.data(), &[1.0, 0.0]);

    assert!(softmax_t(&Tensor::vector(&[1.0]).unwrap(), 0.0).is_err());
}

fn loss_at(m: &Model, params: &[f64], x: &Tensor, y: usize, t: f64) -> f64 {
    m.load_params(params)
        .unwrap()
        .backward(x, Loss::CrossEntropy { target: Target::Hard(y), temperature: t })
        .unwrap()
        .loss
}

#[test]
fn parameter_gradients_match_central_differences() {
    let mut r = rng(7);
    for trial in 0..5 {
        let m = mlp(&mut r, &[4, 8, 3]);
        let x = Tensor::vector(&uniform_vec(&mut r, 4, 0.0, 1.0)).unwrap();
        let y = trial % 3;
        let t = [1.0, 3.0][trial % 2];
        let g = m
            .backward(&x, Loss::CrossEntropy { target: Target::Hard(y), temperature: t })
            .unwrap();
        let p = m.flatten_params();
        let h = 1e-5;
        for k in 0..p.len() {
            let mut up = p.clone();
            let mut dn = p.clone();
            up[k] += h;
            dn[k] -= h;
            let fd = (loss_at(&m, &up, &x, y, t) - loss_at(&m, &dn, &x, y, t)) / (2.0 * h);
            let err = (fd - g.params[k]).abs() / fd.abs().max(g.params[k].abs()).max(1e-6);
            assert!(err < 1e-4 || (fd - g.params[k]).abs() < 1e-9, "param {k}: fd {fd} vs {}", g.params[k]);
        }
    }
}

#[test]
fn saturated_correct_prediction_has_tiny_gradient() {
    let d = Dense::new(2, 2, vec![50.0, 0.0, 0.0, -50.0], vec![0.0, 0.0]).unwrap();
    let m = Model::new(vec![2], vec![Layer::Dense(d)]).unwrap();
    let g = m
        .backward(
            &Tensor::vector(&[1.0, 1.0]).unwrap(),
            Loss::CrossEntropy { target: Target::Hard(0), temperature: 1.0 },
        )
        .unwrap();
    assert!(g.params.iter().all(|v| v.abs() < 1e-30));
}

#[test]
fn dense_input_gradient_closed_form() {
    let w = [0.5, -1.0, 2.0, 0.25, 1.5, -0.75];
    let b = [0.1, -0.2];
    let m = Model::new(vec![3], vec![Layer::Dense(Dense::new(3, 2, w.to_vec(), b.to_vec()).unwrap())]).unwrap();
    let x = [0.2, 0.4, 0.9];
    let z: Vec<f64> = (0..2).map(|o| b[o] + (0..3).map(|i| w[o * 3 + i] * x[i]).sum::<f64>()).collect();
    let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
    let s = e[0] + e[1];
    let delta = [e[0] / s, e[1] / s - 1.0];
    let g = m
        .backward(&Tensor::vector(&x).unwrap(), Loss::CrossEntropy { target: Target::Hard(1), temperature: 1.0 })
        .unwrap();
    for i in 0..3 {
        let want = w[i] * delta[0] + w[3 + i] * delta[1];
        assert!((g.input[i] - want).abs() < 1e-12);
    }
}

fn blobs() -> certfed::data::LabeledDataset {
    synth_dataset(&SynthSpec {
        classes: 2,
        shape: vec![2],
        per_class: 100,
        separation: 1.0,
        noise: 0.1,
        seed: 3,
    })
    .unwrap()
}

#[test]
fn separable_blobs_train_well() {
    let data = blobs();
    let m = mlp(&mut rng(1), &[2, 8, 2]);
    let cfg = TrainConfig { epochs: 20, learning_rate: 0.1, ..TrainConfig::default() };
    let trained = train(&m, &data, &cfg).unwrap();
    assert!(accuracy(&trained, &data).unwrap() >= 0.95);
}

#[test]
fn zero_epochs_and_determinism() {
    let data = blobs();
    let m = mlp(&mut rng(2), &[2, 8, 2]);
    let zero = train(&m, &data, &TrainConfig { epochs: 0, ..TrainConfig::default() }).unwrap();
    assert_eq!(serialize::to_bytes(&zero), serialize::to_bytes(&m));
    let cfg = TrainConfig { epochs: 3, rng_seed: 9, ..TrainConfig::default() };
    let a = train(&m, &data, &cfg).unwrap().flatten_params();
    let b = train(&m, &data, &cfg).unwrap().flatten_params();
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn flatten_load_round_trip_and_counting() {
    let m = worked_layer();
    assert_eq!(m.flatten_params().len(), 6);

    let mut r = rng(4);
    let m = mlp(&mut r, &[3, 4, 2]);
    let v = uniform_vec(&mut r, m.param_count(), -5.0, 5.0);
    assert_eq!(m.load_params(&v).unwrap().flatten_params(), v);
    assert!(m.load_params(&v[1..]).is_err());

    let base = m.flatten_params();
    for k in 0..base.len() {
        let mut p = base.clone();
        p[k] += 1.0;
        let changed: Vec<usize> = m
            .load_params(&p)
            .unwrap()
            .flatten_params()
            .iter()
            .zip(&base)
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(changed, vec![k]);
    }
}

#[test]
fn model_bytes_round_trip() {
    let m = mlp(&mut rng(5), &[6, 5, 3]);
    let bytes = serialize::to_bytes(&m);
    let back = serialize::from_bytes(&bytes).unwrap();
    assert_eq!(back, m);
    assert_eq!(serialize::model_hash(&back), serialize::model_hash(&m));
    assert!(serialize::from_bytes(&bytes[..bytes.len() - 3]).is_err());
}
