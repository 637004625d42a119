mod common;

use certfed::adversarial::{adv_accuracy, pgd_attack, pgd_train, PgdConfig};
use certfed::attacks::{
    adaptive_attack, apply_trigger, distill, AdaptiveSpec, BackdoorSpec, DistillSpec, Maintenance, StopReason,
};
use certfed::data::{synth_dataset, LabeledDataset, SynthSpec};
use certfed::nn::{accuracy, serialize, train, Arch, Dense, Layer, Model, TrainConfig};
use certfed::zonotope::{cert_loss_grad, certify, CertEpsilon, CertOptions};
use certfed::Tensor;
use common::{mlp, rng, uniform_vec};

fn blobs(seed: u64) -> LabeledDataset {
    synth_dataset(&SynthSpec {
        classes: 3,
        shape: vec![5],
        per_class: 40,
        separation: 0.5,
        noise: 0.12,
        seed,
    })
    .unwrap()
}

fn trained(data: &LabeledDataset) -> Model {
    let m = Arch::preset("desk_mlp", data.sample_shape(), 3).unwrap().build(1).unwrap();
    train(&m, data, &TrainConfig { epochs: 15, learning_rate: 0.2, ..TrainConfig::default() }).unwrap()
}

#[test]
fn zero_eps_pgd_is_identity() {
    let data = blobs(1);
    let m = trained(&data);
    let cfg = PgdConfig::new(0.0).unwrap();
    assert_eq!(pgd_attack(&m, data.x(0), data.y(0), &cfg).unwrap(), data.x(0));
    assert_eq!(adv_accuracy(&m, &data, &cfg).unwrap(), accuracy(&m, &data).unwrap());
}

#[test]
fn single_step_on_linear_model_is_fgsm() {
    let w = vec![1.5, -2.0, -1.0, 0.5];
    let m = Model::new(vec![2], vec![Layer::Dense(Dense::new(2, 2, w.clone(), vec![0.0, 0.0]).unwrap())]).unwrap();
    let x = [0.4, 0.6];
    let y = 0;
    let eps = 0.05;
    let mut cfg = PgdConfig::new(eps).unwrap().with_steps(1);
    cfg.step_size = eps;
    cfg.random_start = false;
    cfg.f32_gradients = false;
    let z = m.logits(&x);
    let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
    let p: Vec<f64> = e.iter().map(|v| v / (e[0] + e[1])).collect();
    let delta = [p[0] - 1.0, p[1]];
    let grad = [w[0] * delta[0] + w[2] * delta[1], w[1] * delta[0] + w[3] * delta[1]];
    let want: Vec<f64> = (0..2).map(|i| x[i] + eps * grad[i].signum()).collect();
    let got = pgd_attack(&m, &x, y, &cfg).unwrap();
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-12, "{got:?} vs {want:?}");
    }
}

#[test]
fn pgd_stays_in_ball_and_hurts() {
    let data = blobs(2);
    let m = trained(&data);
    let mut prev = accuracy(&m, &data).unwrap();
    for eps in [0.05, 0.15, 0.3] {
        let cfg = PgdConfig::new(eps).unwrap().with_steps(20).with_seed(3);
        for i in 0..10 {
            let a = pgd_attack(&m, data.x(i), data.y(i), &cfg).unwrap();
            assert!(a.iter().zip(data.x(i)).all(|(u, v)| (u - v).abs() <= eps && (0.0..=1.0).contains(u)));
        }
        let acc = adv_accuracy(&m, &data, &cfg).unwrap();
        assert!(acc <= prev + 0.05, "eps {eps}: {acc} after {prev}");
        prev = acc;
    }
    assert!(prev < accuracy(&m, &data).unwrap());
}

#[test]
fn zero_eps_pgd_training_equals_plain_training() {
    let data = blobs(3);
    let m = Arch::preset("desk_mlp", &[5], 3).unwrap().build(4).unwrap();
    let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
    let a = train(&m, &data, &cfg).unwrap();
    let b = pgd_train(&m, &data, &cfg, &PgdConfig::new(0.0).unwrap()).unwrap();
    assert_eq!(serialize::to_bytes(&a), serialize::to_bytes(&b));
}

#[test]
fn pgd_training_improves_robustness() {
    let data = blobs(4);
    let m = Arch::preset("desk_mlp", &[5], 3).unwrap().build(5).unwrap();
    let cfg = TrainConfig { epochs: 15, learning_rate: 0.2, ..TrainConfig::default() };
    let pgd = PgdConfig::new(0.1).unwrap().with_steps(10).with_seed(1);
    let plain = train(&m, &data, &cfg).unwrap();
    let robust = pgd_train(&m, &data, &cfg, &pgd).unwrap();
    assert!(adv_accuracy(&robust, &data, &pgd).unwrap() > adv_accuracy(&plain, &data, &pgd).unwrap());
}

#[test]
fn certified_points_survive_pgd() {
    let data = blobs(5);
    let m = trained(&data);
    let eps = 0.05;
    let mut seen = 0;
    for i in 0..data.len() {
        let v = certify(&m, data.x(i), data.y(i), CertEpsilon::crt(eps).unwrap()).unwrap();
        if !v.certified {
            continue;
        }
        seen += 1;
        for t in [1.0, 50.0] {
            let cfg = PgdConfig::new(eps).unwrap().with_steps(100).with_temperature(t);
            assert_eq!(m.predict(&pgd_attack(&m, data.x(i), data.y(i), &cfg).unwrap()), data.y(i));
        }
    }
    assert!(seen > 0);
}

#[test]
fn soft_labels_are_distributions() {
    let data = blobs(6);
    let m = Arch::preset("desk_mlp", &[5], 3).unwrap().build(2).unwrap();
    let cfg = TrainConfig { epochs: 3, ..TrainConfig::default() };
    let d = distill(&m, &data, &DistillSpec { temperature: 20.0, teacher_cfg: cfg.clone(), student_cfg: cfg }).unwrap();
    assert_eq!(d.soft_labels.len(), data.len());
    for row in &d.soft_labels {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn zero_magnitude_trigger_is_identity() {
    let x = Tensor::new(vec![1, 3, 3], uniform_vec(&mut rng(1), 9, 0.0, 1.0)).unwrap();
    let s = BackdoorSpec { trigger_magnitude: 0.0, stripe_period: 1, target_class: 0, poison_fraction: 0.1 };
    assert_eq!(apply_trigger(&x, &s).unwrap(), x);
}

#[test]
fn adaptive_with_empty_subset_returns_input() {
    let data = blobs(7);
    let m = trained(&data);
    let soft = certfed::attacks::soft_predictions(&m, &data, 1.0);
    let keep = Maintenance { data: &data, soft_labels: &soft, temperature: 1.0 };
    let o = adaptive_attack(&m, &data, keep, &AdaptiveSpec::new(0, 0.05)).unwrap();
    assert_eq!(o.stop, StopReason::EmptySubset);
    assert_eq!(serialize::to_bytes(&o.model), serialize::to_bytes(&m));
    assert!(o.log.is_empty());
}

#[test]
fn adaptive_certifies_a_small_subset() {
    let data = blobs(8);
    let m = trained(&data);
    let soft = certfed::attacks::soft_predictions(&m, &data, 1.0);
    let keep = Maintenance { data: &data, soft_labels: &soft, temperature: 1.0 };
    let mut spec = AdaptiveSpec::new(10, 0.05);
    spec.learning_rate = 0.01;
    spec.max_iterations = 300;
    let o = adaptive_attack(&m, &data, keep, &spec).unwrap();
    assert!(o.converged, "{:?}", o.stop);
    assert_eq!(o.points_matched, 10);
    for i in 0..10 {
        assert!(certify(&o.model, data.x(i), data.y(i), CertEpsilon::crt(0.05).unwrap()).unwrap().certified);
    }
    assert!(o.log.windows(2).all(|w| w[1].eps >= w[0].eps));
}

#[test]
fn cert_loss_gradient_matches_differences_without_crossings() {
    // Tiny radius keeps every ReLU on one side, so the bound is linear in the
    // parameters around this point and central differences are exact.
    let mut r = rng(31);
    let m = mlp(&mut r, &[3, 5, 3]);
    let x = uniform_vec(&mut r, 3, 0.2, 0.8);
    let logits = m.logits(&x);
    let y = (0..3).min_by(|&a, &b| logits[a].total_cmp(&logits[b])).unwrap();
    let eps = CertEpsilon::crt(1e-3).unwrap();
    let opts = CertOptions { clip: None, ..CertOptions::default() };
    let g = cert_loss_grad(&m, &x, y, eps, &opts).unwrap();
    assert!(g.loss > 0.0);
    let p = m.flatten_params();
    let h = 1e-6;
    let loss = |q: &[f64]| cert_loss_grad(&m.load_params(q).unwrap(), &x, y, eps, &opts).unwrap().loss;
    for k in 0..p.len() {
        let (mut up, mut dn) = (p.clone(), p.clone());
        up[k] += h;
        dn[k] -= h;
        let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
        assert!((fd - g.params[k]).abs() < 1e-5, "param {k}: {fd} vs {}", g.params[k]);
    }
}
