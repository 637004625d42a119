mod common;

use certfed::data::LabeledDataset;
use certfed::nn::{Conv2d, ConvGeometry, Dense, Layer, Model};
use certfed::zonotope::{
    affine, certified_stats, certify, certify_with, conv2d_abs, from_linf_ball, naive_diff_upper,
    pairwise_diff_upper, propagate, relu_deepzono, CertEpsilon, CertOptions, Zonotope,
};
use certfed::Tensor;
use common::{mlp, random_small_mlp, rng, uniform_vec};
use rand::Rng;

fn random_zonotope(r: &mut rand_chacha::ChaCha8Rng, d: usize, n: usize) -> Zonotope {
    let rows: Vec<Vec<f64>> = (0..d).map(|_| uniform_vec(r, n, -1.0, 1.0)).collect();
    Zonotope::from_rows(uniform_vec(r, d, -1.0, 1.0), &rows).unwrap()
}

fn sample_eps(r: &mut rand_chacha::ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..=1.0)).collect()
}

#[test]
fn bounds_contain_instantiations() {
    let mut r = rng(11);
    let z = random_zonotope(&mut r, 4, 6);
    let b = z.bounds();
    for _ in 0..10_000 {
        assert!(b.contains(&z.instantiate(&sample_eps(&mut r, 6))));
    }
    let p = Zonotope::point(&[0.3, -1.0]).unwrap();
    assert_eq!(p.bounds().lower, p.bounds().upper);
}

#[test]
fn affine_image_inside_interval_box() {
    let sq = Zonotope::from_rows(vec![0.25, 0.25], &[vec![0.25, 0.0], vec![0.0, 0.25]]).unwrap();
    let z = affine(&sq, &[2.0, 1.0, 1.0, -1.0], &[0.0, 0.0]).unwrap();
    let b = z.bounds();
    assert_eq!((b.lower.clone(), b.upper.clone()), (vec![0.0, -0.5], vec![1.5, 0.5]));
    // Corner (l3, u4) of the box is not reachable by the rotated rectangle.
    let mut r = rng(1);
    let mut min_dist = f64::INFINITY;
    for _ in 0..10_000 {
        let e: Vec<f64> = (0..2).map(|_| if r.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let p = z.instantiate(&e);
        assert!(b.contains(&p));
        min_dist = min_dist.min((p[0] - 0.0).hypot(p[1] - 0.5));
    }
    assert!(min_dist > 0.1);
}

fn unrolled_dense(conv: &Conv2d) -> Dense {
    let in_dim = conv.in_dim();
    let cols: Vec<Vec<f64>> = (0..in_dim)
        .map(|j| {
            let mut e = vec![0.0; in_dim];
            e[j] = 1.0;
            let g = conv.geometry();
            let m = Model::new(
                vec![g.in_channels, g.in_h, g.in_w],
                vec![Layer::Conv2d(Conv2d::new(conv.geometry(), conv.kernel().to_vec(), vec![0.0; conv.bias().len()]).unwrap())],
            )
            .unwrap();
            m.logits(&e)
        })
        .collect();
    let out_dim = conv.out_dim();
    let mut w = vec![0.0; out_dim * in_dim];
    for (j, col) in cols.iter().enumerate() {
        for (o, v) in col.iter().enumerate() {
            w[o * in_dim + j] = *v;
        }
    }
    let per = out_dim / conv.bias().len();
    let b = (0..out_dim).map(|o| conv.bias()[o / per]).collect();
    Dense::new(in_dim, out_dim, w, b).unwrap()
}

#[test]
fn conv_abstraction_matches_unrolled_affine() {
    let mut r = rng(12);
    let g = ConvGeometry {
        in_channels: 2,
        in_h: 4,
        in_w: 5,
        out_channels: 2,
        kernel_h: 2,
        kernel_w: 2,
        stride_w: 1,
        stride_h: 2,
    };
    let conv = Conv2d::new(g, uniform_vec(&mut r, g.kernel_len(), -1.0, 1.0), uniform_vec(&mut r, 2, -1.0, 1.0)).unwrap();
    let dense = unrolled_dense(&conv);
    for _ in 0..5 {
        let z = random_zonotope(&mut r, conv.in_dim(), 7);
        let a = conv2d_abs(&z, &conv).unwrap();
        let b = affine(&z, dense.weight(), dense.bias()).unwrap();
        for (u, v) in a.center().iter().zip(b.center()) {
            assert!((u - v).abs() < 1e-12);
        }
        for i in 0..7 {
            for (u, v) in a.generator(i).iter().zip(b.generator(i)) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn conv_stride_two_hand_unrolled() {
    // 4x4 input, 2x2 kernel [[1,2],[3,4]], stride 2: each output reads a
    // disjoint 2x2 block.
    let g = ConvGeometry {
        in_channels: 1,
        in_h: 4,
        in_w: 4,
        out_channels: 1,
        kernel_h: 2,
        kernel_w: 2,
        stride_w: 2,
        stride_h: 2,
    };
    let conv = Conv2d::new(g, vec![1.0, 2.0, 3.0, 4.0], vec![0.5]).unwrap();
    let mut w = vec![0.0; 4 * 16];
    for (o, (r0, c0)) in [(0, 0), (0, 2), (2, 0), (2, 2)].into_iter().enumerate() {
        w[o * 16 + r0 * 4 + c0] = 1.0;
        w[o * 16 + r0 * 4 + c0 + 1] = 2.0;
        w[o * 16 + (r0 + 1) * 4 + c0] = 3.0;
        w[o * 16 + (r0 + 1) * 4 + c0 + 1] = 4.0;
    }
    let z = random_zonotope(&mut rng(13), 16, 3);
    let a = conv2d_abs(&z, &conv).unwrap();
    let b = affine(&z, &w, &[0.5; 4]).unwrap();
    assert_eq!(a, b);

    let zero = Conv2d::new(g, vec![0.0; 4], vec![0.25]).unwrap();
    let c = conv2d_abs(&z, &zero).unwrap();
    assert_eq!(c.center(), &[0.25; 4]);
    assert!((0..c.num_symbols()).all(|i| c.generator(i).iter().all(|&v| v == 0.0)));
}

#[test]
fn relu_entirely_negative_collapses() {
    let z = Zonotope::from_rows(vec![-1.5], &[vec![0.5]]).unwrap();
    let out = relu_deepzono(&z);
    assert_eq!(out.bounds().lower, vec![0.0]);
    assert_eq!(out.bounds().upper, vec![0.0]);
}

#[test]
fn monte_carlo_soundness_small() {
    let mut r = rng(21);
    for _ in 0..20 {
        let m = random_small_mlp(&mut r);
        let x = uniform_vec(&mut r, m.input_dim(), 0.0, 1.0);
        let eps = r.random_range(0.01..0.3);
        let out = propagate(&m, &from_linf_ball(&x, CertEpsilon::crt(eps).unwrap(), None).unwrap()).unwrap();
        let b = out.bounds();
        for _ in 0..200 {
            let p: Vec<f64> = x.iter().map(|v| v + r.random_range(-eps..=eps)).collect();
            let y = m.logits(&p);
            for (j, v) in y.iter().enumerate() {
                assert!(*v >= b.lower[j] - 1e-9 && *v <= b.upper[j] + 1e-9);
            }
        }
    }
}

#[test]
fn zero_radius_propagation_is_forward() {
    let mut r = rng(22);
    let m = mlp(&mut r, &[5, 7, 7, 3]);
    let x = uniform_vec(&mut r, 5, 0.0, 1.0);
    let out = propagate(&m, &from_linf_ball(&x, CertEpsilon::crt(0.0).unwrap(), None).unwrap()).unwrap();
    let f = m.forward(&Tensor::vector(&x).unwrap()).unwrap();
    for (u, v) in out.center().iter().zip(f.data()) {
        assert!((u - v).abs() < 1e-12);
    }
    assert!(out.radius().iter().all(|&v| v == 0.0));
}

#[test]
fn shared_difference_never_looser_than_naive() {
    let mut r = rng(23);
    for _ in 0..500 {
        let z = random_zonotope(&mut r, 4, 5);
        for q in 0..4 {
            for y in 0..4 {
                if q != y {
                    assert!(pairwise_diff_upper(&z, q, y).unwrap() <= naive_diff_upper(&z, q, y).unwrap() + 1e-12);
                }
            }
        }
    }
}

#[test]
fn point_certification() {
    let d = Dense::new(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
    let m = Model::new(vec![2], vec![Layer::Dense(d)]).unwrap();
    let zero = CertEpsilon::crt(0.0).unwrap();
    let ok = certify(&m, &[0.9, 0.1], 0, zero).unwrap();
    assert!(ok.certified && ok.cert_loss == 0.0);
    let bad = certify(&m, &[0.1, 0.9], 0, zero).unwrap();
    assert!(!bad.certified && bad.cert_loss > 0.0);
}

/// Brute force over a 101x101 grid of the (clipped) ball plus its corners:
/// true if every sampled point keeps label `y` as the strict argmax.
fn grid_robust(m: &Model, x: &[f64], y: usize, eps: f64) -> bool {
    let lo: Vec<f64> = x.iter().map(|v| (v - eps).max(0.0)).collect();
    let hi: Vec<f64> = x.iter().map(|v| (v + eps).min(1.0)).collect();
    let keeps = |p: &[f64]| {
        let z = m.logits(p);
        (0..z.len()).all(|q| q == y || z[q] < z[y])
    };
    for i in 0..=100 {
        for j in 0..=100 {
            let p = [lo[0] + (hi[0] - lo[0]) * i as f64 / 100.0, lo[1] + (hi[1] - lo[1]) * j as f64 / 100.0];
            if !keeps(&p) {
                return false;
            }
        }
    }
    true
}

#[test]
fn certified_implies_grid_robust() {
    let mut r = rng(24);
    let mut certified = 0;
    for _ in 0..50 {
        let m = mlp(&mut r, &[2, 4, 3]);
        let x = uniform_vec(&mut r, 2, 0.1, 0.9);
        let y = m.predict(&x);
        let eps = r.random_range(0.001..0.1);
        let v = certify(&m, &x, y, CertEpsilon::crt(eps).unwrap()).unwrap();
        if v.certified {
            certified += 1;
            assert!(grid_robust(&m, &x, y, eps));
        }
    }
    assert!(certified > 0);
}

#[test]
fn stats_monotone_and_huge_eps() {
    let mut r = rng(25);
    let m = mlp(&mut r, &[3, 8, 2]);
    let xs: Vec<f64> = uniform_vec(&mut r, 3 * 40, 0.0, 1.0);
    let labels: Vec<usize> = xs.chunks(3).map(|x| m.predict(x)).collect();
    let data = LabeledDataset::new("pts", Tensor::new(vec![40, 3], xs).unwrap(), labels, 2).unwrap();
    let mut prev = (1.0f64, 0.0f64);
    for e in [0.0, 0.05, 0.1, 0.2] {
        let s = certified_stats(&m, &data, CertEpsilon::crt(e).unwrap()).unwrap();
        if e == 0.0 {
            assert_eq!(s.certified_accuracy, 1.0);
        }
        assert!(s.certified_accuracy <= prev.0 + 1e-12 && s.mean_cert_loss + 1e-12 >= prev.1);
        prev = (s.certified_accuracy, s.mean_cert_loss);
    }
    let opts = CertOptions { clip: None, ..CertOptions::default() };
    let huge = (0..data.len())
        .filter(|&i| certify_with(&m, data.x(i), data.y(i), CertEpsilon::crt(10.0).unwrap(), &opts).unwrap().certified)
        .count();
    assert_eq!(huge, 0);
}
