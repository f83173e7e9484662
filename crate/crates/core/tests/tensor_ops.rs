mod common;

use common::gradcheck::{self, TOLERANCE};
use occufield::tensor::{
    fnv1a64, kernels, load_checkpoint, ops, save_checkpoint, Activation, Graph, LayerKind, LayerParams, ParamSet,
    Tensor, CHECKPOINT_HEADER_LEN,
};
use occufield::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const INSTANCES: u64 = 20;

fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::from_vec(shape, data).unwrap()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    t(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn layer(kind: LayerKind, w: Tensor<f64>, b: Tensor<f64>, stride: usize, pad: usize) -> LayerParams<f64> {
    LayerParams::new(kind, w, b, stride, pad).unwrap()
}

fn single(l: LayerParams<f64>) -> ParamSet<f64> {
    let mut set = ParamSet::new();
    set.push(l);
    set
}

fn probe(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Brute-force 2D cross-correlation written independently of the engine loops.
#[allow(clippy::too_many_arguments)]
fn conv2d_oracle(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    k: &[f64],
    co: usize,
    kh: usize,
    kw: usize,
    s: usize,
    p: usize,
) -> Vec<f64> {
    let oh = (h + 2 * p - kh) / s + 1;
    let ow = (w + 2 * p - kw) / s + 1;
    let mut out = vec![0.0; co * oh * ow];
    for o in 0..co {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = 0.0;
                for ci in 0..c {
                    for dy in 0..kh {
                        for dx in 0..kw {
                            let iy = (y * s + dy) as isize - p as isize;
                            let ix = (xx * s + dx) as isize - p as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                acc +=
                                    x[(ci * h + iy as usize) * w + ix as usize] * k[((o * c + ci) * kh + dy) * kw + dx];
                            }
                        }
                    }
                }
                out[(o * oh + y) * ow + xx] = acc;
            }
        }
    }
    out
}

#[test]
fn conv2d_identity_kernel() {
    let x = t(&[1, 3, 3], vec![1.0; 9]);
    let l = layer(LayerKind::Conv2d, t(&[1, 1, 1, 1], vec![1.0]), t(&[1], vec![0.0]), 1, 0);
    let y = ops::conv2d(&x, &l).unwrap();
    assert_eq!(y.shape(), &[1, 3, 3]);
    assert_eq!(y.data(), &[1.0; 9]);
}

#[test]
fn conv2d_stride_two_window_sums() {
    let x = t(&[1, 4, 4], (1..=16).map(f64::from).collect());
    let l = layer(LayerKind::Conv2d, t(&[1, 1, 2, 2], vec![1.0; 4]), t(&[1], vec![0.0]), 2, 0);
    let y = ops::conv2d(&x, &l).unwrap();
    let oracle = conv2d_oracle(x.data(), 1, 4, 4, &[1.0; 4], 1, 2, 2, 2, 0);
    assert_eq!(oracle, vec![14.0, 22.0, 46.0, 54.0]);
    assert_eq!(y.data(), oracle.as_slice());
}

#[test]
fn conv2d_matches_brute_force_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (s, p, k) in [(1, 0, 3), (1, 1, 3), (2, 1, 4), (2, 0, 2)] {
        let x = random(&mut rng, &[2, 8, 8]);
        let w = random(&mut rng, &[3, 2, k, k]);
        let l = layer(LayerKind::Conv2d, w.clone(), Tensor::zeros(&[3]), s, p);
        let y = ops::conv2d(&x, &l).unwrap();
        let oracle = conv2d_oracle(x.data(), 2, 8, 8, w.data(), 3, k, k, s, p);
        for (a, b) in y.data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn conv_shape_errors() {
    let x = t(&[2, 4, 4], vec![0.0; 32]);
    let wrong_ch = layer(LayerKind::Conv2d, Tensor::zeros(&[1, 3, 1, 1]), Tensor::zeros(&[1]), 1, 0);
    assert!(matches!(ops::conv2d(&x, &wrong_ch), Err(Error::Config(_))));
    // (4 + 2 - 3) is odd: stride 2 does not divide exactly.
    let inexact = layer(LayerKind::Conv2d, Tensor::zeros(&[1, 2, 3, 3]), Tensor::zeros(&[1]), 2, 1);
    assert!(matches!(ops::conv2d(&x, &inexact), Err(Error::Config(_))));
    assert!(
        LayerParams::new(LayerKind::Conv2d, Tensor::<f64>::zeros(&[1, 2, 3, 3]), Tensor::zeros(&[2]), 1, 0).is_err()
    );
}

#[test]
fn conv3d_examples() {
    let x = t(&[1, 2, 2, 2], vec![1.0; 8]);
    let id = layer(LayerKind::Conv3d, t(&[1, 1, 1, 1, 1], vec![1.0]), Tensor::zeros(&[1]), 1, 0);
    assert_eq!(ops::conv3d(&x, &id).unwrap().data(), x.data());

    let x = t(&[1, 4, 4, 4], vec![1.0; 64]);
    let ones = layer(LayerKind::Conv3d, t(&[1, 1, 2, 2, 2], vec![1.0; 8]), Tensor::zeros(&[1]), 2, 0);
    let y = ops::conv3d(&x, &ones).unwrap();
    assert_eq!(y.shape(), &[1, 2, 2, 2]);
    assert!(y.data().iter().all(|&v| v == 8.0));
}

#[test]
fn tconv2d_examples() {
    let x = t(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
    let l = layer(LayerKind::TConv2d, t(&[1, 1, 2, 2], vec![1.0; 4]), Tensor::zeros(&[1]), 2, 0);
    let y = ops::tconv2d(&x, &l).unwrap();
    assert_eq!(y.shape(), &[1, 4, 4]);
    // Scatter-add oracle: every input value tiles its own 2x2 block.
    let mut oracle = vec![0.0; 16];
    for iy in 0..2 {
        for ix in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    oracle[(iy * 2 + dy) * 4 + ix * 2 + dx] += x.data()[iy * 2 + ix];
                }
            }
        }
    }
    assert_eq!(y.data(), oracle.as_slice());

    let id = layer(LayerKind::TConv2d, t(&[1, 1, 1, 1], vec![2.5]), Tensor::zeros(&[1]), 1, 0);
    let y = ops::tconv2d(&x, &id).unwrap();
    assert_eq!(y.data(), &[2.5, 5.0, 7.5, 10.0]);
}

#[test]
fn conv_then_tconv_restores_extent() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for extent in [4usize, 8, 16] {
        let x = random(&mut rng, &[2, extent, extent]);
        let down = layer(LayerKind::Conv2d, random(&mut rng, &[3, 2, 4, 4]), Tensor::zeros(&[3]), 2, 1);
        let up = layer(LayerKind::TConv2d, random(&mut rng, &[3, 2, 4, 4]), Tensor::zeros(&[2]), 2, 1);
        let y = ops::tconv2d(&ops::conv2d(&x, &down).unwrap(), &up).unwrap();
        assert_eq!(y.shape(), x.shape());
    }
}

#[test]
fn extent_formulas_exhaustive() {
    for extent in 1..=8usize {
        for kernel in 1..=extent + 2 {
            for stride in 1..=3usize {
                for pad in 0..=2usize {
                    let expect = {
                        let padded = extent + 2 * pad;
                        (padded >= kernel && (padded - kernel) % stride == 0).then(|| (padded - kernel) / stride + 1)
                    };
                    assert_eq!(ops::conv_extent(extent, kernel, stride, pad), expect);
                    let x = Tensor::<f64>::full(&[1, extent, extent], 1.0);
                    let l = layer(
                        LayerKind::Conv2d,
                        Tensor::full(&[1, 1, kernel, kernel], 1.0),
                        Tensor::zeros(&[1]),
                        stride,
                        pad,
                    );
                    match (ops::conv2d(&x, &l), expect) {
                        (Ok(y), Some(e)) => assert_eq!(y.shape(), &[1, e, e]),
                        (Err(Error::Config(_)), None) => {}
                        (r, e) => panic!(
                            "extent {extent} k {kernel} s {stride} p {pad}: {:?} vs {e:?}",
                            r.map(|y| y.shape().to_vec())
                        ),
                    }
                    let full = (extent - 1) * stride + kernel;
                    let texpect = (full > 2 * pad).then(|| full - 2 * pad);
                    assert_eq!(ops::tconv_extent(extent, kernel, stride, pad), texpect);
                    let tl = layer(
                        LayerKind::TConv2d,
                        Tensor::full(&[1, 1, kernel, kernel], 1.0),
                        Tensor::zeros(&[1]),
                        stride,
                        pad,
                    );
                    if let Some(e) = texpect {
                        assert_eq!(ops::tconv2d(&x, &tl).unwrap().shape(), &[1, e, e]);
                    }
                }
            }
            if extent % 2 == 0 {
                let x = Tensor::<f64>::full(&[1, extent, extent], 1.0);
                assert_eq!(ops::max_pool(&x, 2, 2).unwrap().shape(), &[1, extent / 2, extent / 2]);
            }
        }
    }
}

#[test]
fn max_pool_examples() {
    let c = Tensor::<f64>::full(&[2, 4, 4], 3.0);
    let y = ops::max_pool(&c, 2, 2).unwrap();
    assert_eq!(y.shape(), &[2, 2, 2]);
    assert!(y.data().iter().all(|&v| v == 3.0));

    let x = t(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]);
    assert_eq!(ops::max_pool(&x, 2, 2).unwrap().data(), &[4.0]);

    let odd = t(&[1, 3, 3], vec![0.0; 9]);
    assert!(matches!(ops::max_pool(&odd, 2, 2), Err(Error::Config(_))));
}

#[test]
fn max_pool_gradient_routes_to_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&mut rng, &[2, 4, 4]);
    let mut g = Graph::new();
    let xv = g.input_with_grad(x.clone());
    let y = g.max_pool(xv, 2, 2).unwrap();
    let ones = vec![1.0; g.value(y).len()];
    let s = g.weighted_sum(y, &ones).unwrap();
    g.backward(s).unwrap();
    let grad = g.grad(xv).unwrap();
    // Enumeration oracle: find each window's maximum directly.
    let mut expect = vec![0.0; 32];
    for c in 0..2 {
        for wy in 0..2 {
            for wx in 0..2 {
                let mut best = (f64::NEG_INFINITY, 0);
                for dy in 0..2 {
                    for dx in 0..2 {
                        let i = (c * 4 + wy * 2 + dy) * 4 + wx * 2 + dx;
                        if x.data()[i] > best.0 {
                            best = (x.data()[i], i);
                        }
                    }
                }
                expect[best.1] = 1.0;
            }
        }
    }
    assert_eq!(grad, expect.as_slice());

    // Ties go to the first index in window order.
    let tie = t(&[1, 2, 2], vec![5.0, 5.0, 5.0, 5.0]);
    let mut g = Graph::new();
    let xv = g.input_with_grad(tie);
    let y = g.max_pool(xv, 2, 2).unwrap();
    let s = g.weighted_sum(y, &[1.0]).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(xv).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn dense_examples() {
    let id = layer(LayerKind::Dense, t(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]), Tensor::zeros(&[2]), 1, 0);
    assert_eq!(ops::dense(&t(&[2], vec![4.0, -1.0]), &id).unwrap().data(), &[4.0, -1.0]);
    let l = layer(LayerKind::Dense, t(&[2, 2], vec![1.0, 1.0, 1.0, -1.0]), t(&[2], vec![0.0, 1.0]), 1, 0);
    assert_eq!(ops::dense(&t(&[2], vec![2.0, 3.0]), &l).unwrap().data(), &[5.0, 0.0]);
    assert!(matches!(ops::dense(&t(&[3], vec![0.0; 3]), &l), Err(Error::Config(_))));
}

#[test]
fn activation_examples() {
    let x = t(&[3], vec![-1.0, 0.0, 2.0]);
    assert_eq!(ops::activation(&x, Activation::Relu).data(), &[0.0, 0.0, 2.0]);
    assert_eq!(ops::activation(&t(&[1], vec![0.0]), Activation::Sigmoid).data(), &[0.5]);
    let lr = ops::activation(&x, Activation::LeakyRelu);
    assert_eq!(lr.data(), &[-0.01, 0.0, 2.0]);
    let big = Tensor::<f32>::from_vec(&[2], vec![80.0, -80.0]).unwrap();
    let s = ops::activation(&big, Activation::Sigmoid);
    assert!(s.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn loss_examples() {
    let a = t(&[2], vec![1.0, 0.0]);
    let z = t(&[2], vec![0.0, 0.0]);
    assert_eq!(ops::loss_mse(&a, &a).unwrap(), 0.0);
    assert_eq!(ops::loss_mse(&a, &z).unwrap(), 0.5);
    assert!(ops::loss_mse(&a, &t(&[1], vec![0.0])).is_err());

    let l = ops::loss_bce(&t(&[1], vec![0.5]), &t(&[1], vec![1.0])).unwrap();
    assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    let mut prev = f64::INFINITY;
    for p in [0.9, 0.99, 0.999, 0.9999] {
        let l = ops::loss_bce(&t(&[1], vec![p]), &t(&[1], vec![1.0])).unwrap();
        assert!(l < prev);
        prev = l;
    }
    assert!(prev < 1e-3);
    assert!(matches!(ops::loss_bce(&t(&[1], vec![0.5]), &t(&[1], vec![0.3])), Err(Error::Config(_))));
}

#[test]
fn mse_gradient_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = random(&mut rng, &[6]);
    let q = random(&mut rng, &[6]);
    let mut g = Graph::new();
    let pv = g.input_with_grad(p.clone());
    let l = g.mse(pv, q.data()).unwrap();
    g.backward(l).unwrap();
    for ((gv, a), b) in g.grad(pv).unwrap().iter().zip(p.data()).zip(q.data()) {
        assert!((gv - 2.0 * (a - b) / 6.0).abs() < 1e-14);
    }
}

fn assert_report(name: &str, r: gradcheck::Report) {
    assert!(r.checked > 0, "{name}: nothing checked");
    assert!(r.worst < TOLERANCE, "{name}: worst relative error {}", r.worst);
}

#[test]
fn gradients_conv2d() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = random(&mut rng, &[2, 8, 8]);
        let (s, p) = if seed % 2 == 0 { (1, 1) } else { (1, 0) };
        let params = single(layer(LayerKind::Conv2d, random(&mut rng, &[4, 2, 3, 3]), random(&mut rng, &[4]), s, p));
        let out_len = 4 * if p == 1 { 64 } else { 36 };
        let w = probe(&mut rng, out_len);
        let r = gradcheck::check(&[x], &params, |g, v, ps| {
            let y = g.conv2d(v[0], ps.layer(0)).unwrap();
            g.weighted_sum(y, &w).unwrap()
        });
        assert_report("conv2d", r);
    }
}

#[test]
fn gradients_conv2d_strided() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let x = random(&mut rng, &[2, 8, 8]);
        let params = single(layer(LayerKind::Conv2d, random(&mut rng, &[3, 2, 4, 4]), random(&mut rng, &[3]), 2, 1));
        let w = probe(&mut rng, 3 * 16);
        let r = gradcheck::check(&[x], &params, |g, v, ps| {
            let y = g.conv2d(v[0], ps.layer(0)).unwrap();
            g.weighted_sum(y, &w).unwrap()
        });
        assert_report("conv2d strided", r);
    }
}

#[test]
fn gradients_conv3d() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let x = random(&mut rng, &[2, 4, 4, 4]);
        let params = single(layer(LayerKind::Conv3d, random(&mut rng, &[2, 2, 3, 3, 3]), random(&mut rng, &[2]), 1, 1));
        let w = probe(&mut rng, 2 * 64);
        let r = gradcheck::check(&[x], &params, |g, v, ps| {
            let y = g.conv3d(v[0], ps.layer(0)).unwrap();
            g.weighted_sum(y, &w).unwrap()
        });
        assert_report("conv3d", r);
    }
}

#[test]
fn gradients_tconv2d() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let x = random(&mut rng, &[3, 4, 4]);
        let params = single(layer(LayerKind::TConv2d, random(&mut rng, &[3, 2, 4, 4]), random(&mut rng, &[2]), 2, 1));
        let w = probe(&mut rng, 2 * 64);
        let r = gradcheck::check(&[x], &params, |g, v, ps| {
            let y = g.tconv2d(v[0], ps.layer(0)).unwrap();
            g.weighted_sum(y, &w).unwrap()
        });
        assert_report("tconv2d", r);
    }
}

/// Distinct values spaced well beyond the finite-difference step so window
/// maxima never swap under perturbation.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        vals.swap(i, j);
    }
    t(shape, vals)
}

#[test]
fn gradients_max_pool() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let dims = if seed % 2 == 0 { 2 } else { 3 };
        let shape: Vec<usize> = if dims == 2 { vec![2, 4, 4] } else { vec![2, 4, 4, 4] };
        let x = distinct(&mut rng, &shape);
        let out_len = x.len() / if dims == 2 { 4 } else { 8 };
        let w = probe(&mut rng, out_len);
        let r = gradcheck::check(&[x], &ParamSet::new(), |g, v, _| {
            let y = g.max_pool(v[0], 2, dims).unwrap();
            g.weighted_sum(y, &w).unwrap()
        });
        assert_report("max_pool", r);
    }
}

#[test]
fn gradients_dense() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let batch = 1 + (seed as usize % 3);
        let x = random(&mut rng, &[batch, 5]);
        let params = single(layer(LayerKind::Dense, random(&mut rng, &[3, 5]), random(&mut rng, &[3]), 1, 0));
        let w = probe(&mut rng, batch * 3);
        let r = gradcheck::check(&[x], &params, |g, v, ps| {
            let y = g.dense(v[0], ps.layer(0)).unwrap();
            g.weighted_sum(y, &w).unwrap()
        });
        assert_report("dense", r);
    }
}

#[test]
fn gradients_activations() {
    for kind in [Activation::Relu, Activation::LeakyRelu, Activation::Sigmoid] {
        for seed in 0..INSTANCES {
            let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
            // Keep piecewise-linear inputs away from the kink.
            let data = (0..12)
                .map(|_| {
                    let v: f64 = rng.random_range(0.05..3.0);
                    if rng.random_bool(0.5) {
                        -v
                    } else {
                        v
                    }
                })
                .collect();
            let x = t(&[12], data);
            let w = probe(&mut rng, 12);
            let r = gradcheck::check(&[x], &ParamSet::new(), |g, v, _| {
                let y = g.act(v[0], kind).unwrap();
                g.weighted_sum(y, &w).unwrap()
            });
            assert_report("activation", r);
        }
    }
}

#[test]
fn gradients_losses() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
        let target: Vec<f64> = (0..8).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let pred = t(&[8], (0..8).map(|_| rng.random_range(0.05..0.95)).collect());
        let tg = target.clone();
        let r = gradcheck::check(std::slice::from_ref(&pred), &ParamSet::new(), |g, v, _| g.mse(v[0], &tg).unwrap());
        assert_report("mse", r);
        let tg = target.clone();
        let r = gradcheck::check(&[pred], &ParamSet::new(), |g, v, _| g.bce(v[0], &tg).unwrap());
        assert_report("bce", r);

        // Clamping active: some predictions sit below the epsilon floor.
        let mut clamped: Vec<f64> = (0..8).map(|_| rng.random_range(0.05..0.95)).collect();
        clamped[0] = 1e-9;
        clamped[1] = 1.0 - 1e-9;
        let tg = target.clone();
        let r = gradcheck::check_with_step(
            &[t(&[8], clamped)],
            &ParamSet::new(),
            |g, v, _| g.bce(v[0], &tg).unwrap(),
            |_, x| {
                // Stay on one side of the clamp boundary.
                let d = (x - kernels::BCE_EPS).abs().min((1.0 - kernels::BCE_EPS - x).abs());
                gradcheck::STEP.min(d / 2.0)
            },
        );
        assert_report("bce clamped", r);
    }
}

#[test]
fn gradients_grid_sampling() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let grid2 = random(&mut rng, &[3, 5, 6]);
        let coords2: Vec<[f64; 2]> =
            (0..7).map(|_| [rng.random_range(-0.5..5.5), rng.random_range(-0.5..4.5)]).collect();
        let w2 = probe(&mut rng, 21);
        let r = gradcheck::check(&[grid2], &ParamSet::new(), |g, v, _| {
            let y = g.sample_bilinear(v[0], &coords2).unwrap();
            g.weighted_sum(y, &w2).unwrap()
        });
        assert_report("bilinear", r);

        let grid3 = random(&mut rng, &[2, 3, 4, 5]);
        let coords3: Vec<[f64; 3]> = (0..6)
            .map(|_| [rng.random_range(0.0..4.0), rng.random_range(0.0..3.0), rng.random_range(0.0..2.0)])
            .collect();
        let w3 = probe(&mut rng, 12);
        let r = gradcheck::check(&[grid3], &ParamSet::new(), |g, v, _| {
            let y = g.sample_trilinear(v[0], &coords3).unwrap();
            g.weighted_sum(y, &w3).unwrap()
        });
        assert_report("trilinear", r);
    }
}

#[test]
fn gradients_composite_mlp() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut params = ParamSet::new();
    params.push(layer(LayerKind::Dense, random(&mut rng, &[6, 4]), random(&mut rng, &[6]), 1, 0));
    params.push(layer(LayerKind::Dense, random(&mut rng, &[1, 10]), random(&mut rng, &[1]), 1, 0));
    let a = random(&mut rng, &[3, 2]);
    let b = random(&mut rng, &[3, 2]);
    let target = vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0];
    let r = gradcheck::check(&[a, b], &params, |g, v, ps| {
        let x = g.concat_cols(&[v[0], v[1]]).unwrap();
        let x2 = g.concat_rows(&[x, x]).unwrap();
        let h = g.dense(x2, ps.layer(0)).unwrap();
        let h = g.act(h, Activation::Sigmoid).unwrap();
        let h2 = g.concat_cols(&[h, x2]).unwrap();
        let y = g.dense(h2, ps.layer(1)).unwrap();
        let y = g.act(y, Activation::Sigmoid).unwrap();
        g.bce(y, &target).unwrap()
    });
    assert_report("mlp", r);
}

#[test]
fn non_finite_values_are_errors() {
    let x = t(&[2], vec![f64::MAX, f64::MAX]);
    let l = layer(LayerKind::Dense, t(&[1, 2], vec![10.0, 10.0]), Tensor::zeros(&[1]), 1, 0);
    let mut g = Graph::new();
    let v = g.input(x);
    assert!(matches!(g.dense(v, &l), Err(Error::NonFinite(_))));
}

#[test]
fn checkpoint_round_trip_and_size() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.occf");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut params: ParamSet<f32> = ParamSet::new();
    params.push(LayerParams::init(LayerKind::Conv2d, 3, 4, 3, 1, 1, &mut rng).unwrap());
    params.push(LayerParams::init(LayerKind::Dense, 5, 2, 1, 1, 0, &mut rng).unwrap());
    let hash = fnv1a64("arch=test");
    save_checkpoint(&params, hash, &path).unwrap();
    let size = std::fs::metadata(&path).unwrap().len() as usize;
    assert_eq!(size, CHECKPOINT_HEADER_LEN + 4 * (4 * 3 * 9 + 4 + 2 * 5 + 2));

    let mut fresh: ParamSet<f32> = ParamSet::new();
    fresh.push(LayerParams::init(LayerKind::Conv2d, 3, 4, 3, 1, 1, &mut rng).unwrap());
    fresh.push(LayerParams::init(LayerKind::Dense, 5, 2, 1, 1, 0, &mut rng).unwrap());
    let before = fresh.flatten();
    assert!(matches!(load_checkpoint(&mut fresh, hash ^ 1, &path), Err(Error::Checkpoint(_))));
    assert_eq!(fresh.flatten(), before, "failed load must not modify parameters");

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_checkpoint(&mut fresh, hash, &path), Err(Error::Checkpoint(_))));
    std::fs::write(&path, &bytes).unwrap();

    load_checkpoint(&mut fresh, hash, &path).unwrap();
    let a: Vec<u32> = params.flatten().iter().map(|v| v.to_bits()).collect();
    let b: Vec<u32> = fresh.flatten().iter().map(|v| v.to_bits()).collect();
    assert_eq!(a, b);
}

proptest! {
    #[test]
    fn mse_symmetric(a in proptest::collection::vec(-10.0f64..10.0, 1..20), seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = a.iter().map(|_| rng.random_range(-10.0..10.0)).collect();
        let ta = t(&[a.len()], a.clone());
        let tb = t(&[b.len()], b);
        prop_assert_eq!(ops::loss_mse(&ta, &tb).unwrap(), ops::loss_mse(&tb, &ta).unwrap());
    }

    #[test]
    fn bce_non_negative(p in proptest::collection::vec(0.0f64..1.0, 1..20), bits in proptest::collection::vec(any::<bool>(), 20)) {
        let target: Vec<f64> = p.iter().zip(&bits).map(|(_, &b)| if b { 1.0 } else { 0.0 }).collect();
        let l = ops::loss_bce(&t(&[p.len()], p.clone()), &t(&[target.len()], target)).unwrap();
        prop_assert!(l >= 0.0);
    }

    #[test]
    fn checkpoint_identity(seed in 0u64..500) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.occf");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params: ParamSet<f32> = ParamSet::new();
        params.push(LayerParams::init(LayerKind::Conv3d, 1, 2, 3, 1, 1, &mut rng).unwrap());
        save_checkpoint(&params, 42, &path).unwrap();
        let mut other = params.clone();
        other.tensors_mut().for_each(|t| t.data_mut().iter_mut().for_each(|v| *v = 0.0));
        load_checkpoint(&mut other, 42, &path).unwrap();
        prop_assert_eq!(other.flatten(), params.flatten());
    }
}
