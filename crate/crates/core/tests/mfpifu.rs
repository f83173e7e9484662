use occufield::datagen::{generate_shape, render_views, SceneSpec, ShapeKind};
use occufield::geometry::{add, orthographic_rig, Camera, CubeBounds, LabeledPoint, Point3, Projection, TriMesh};
use occufield::metrics::iou;
use occufield::mfpifu::{
    coarse_training_points, continue_coarse, reconstruct_coarse, train_coarse, CoarseConfig, CoarseNet, FeaturePyramid,
    MultiViewSample,
};
use occufield::tensor::{Graph, LayerKind, Tensor};
use occufield::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> CoarseConfig {
    CoarseConfig {
        views: 2,
        stages: 2,
        channels: 8,
        image_size: 32,
        mlp_widths: vec![16, 1],
        point_count: 64,
        epochs: 3,
        batch: 1,
        ..CoarseConfig::desk()
    }
}

fn capsule() -> TriMesh {
    let spec = SceneSpec {
        kind: ShapeKind::Capsule { a: [-4.0, -11.0, -2.0], b: [5.0, 11.0, 3.0], radius: 6.0 },
        center: [0.0; 3],
        seed: 0,
        field_resolution: 48,
    };
    generate_shape(&spec).unwrap()
}

fn capsule_sample(views: &[usize], size: usize) -> MultiViewSample {
    let bounds = CubeBounds::centered([0.0; 3], 20.0).unwrap();
    let gt = capsule();
    let (imgs, cams) = render_views(&gt, 4, size, &bounds).unwrap();
    MultiViewSample {
        images: views.iter().map(|&i| imgs[i].to_tensor()).collect(),
        cameras: views.iter().map(|&i| cams[i].clone()).collect(),
        gt,
        bounds,
    }
}

/// Final layer weights zeroed so the network outputs `sigmoid(bias)`.
fn constant_net(cfg: &CoarseConfig, bias: f32) -> CoarseNet {
    let mut net = CoarseNet::new(cfg, 0).unwrap();
    let last = net.params.len() - 1;
    let layer = net.params.layer_mut(last);
    layer.weight.data_mut().fill(0.0);
    layer.bias.data_mut().fill(bias);
    net
}

#[test]
fn paper_architecture_arithmetic() {
    let cfg = CoarseConfig::paper();
    assert_eq!(cfg.query_width(), 1025);
    assert_eq!(cfg.stage_extents(), vec![128, 64, 32, 16]);
    let net = CoarseNet::new(&cfg, 0).unwrap();
    assert_eq!(net.query_width(), 1025);
    assert_eq!(CoarseNet::new(&CoarseConfig::desk(), 0).unwrap().query_width(), 33);
}

#[test]
fn hourglass_extents_follow_halving() {
    let cfg = tiny_config();
    let net = CoarseNet::new(&cfg, 1).unwrap();
    let img = Tensor::full(&[3, 32, 32], 0.5f32);
    let pyr = net.hourglass_forward(&img).unwrap();
    assert_eq!(pyr.extents(), vec![(8, 16, 16), (8, 8, 8)]);
    assert_eq!(cfg.stage_extents(), vec![16, 8]);
    assert!(net.hourglass_forward(&Tensor::zeros(&[3, 16, 16])).is_err());
    assert!(CoarseNet::new(&CoarseConfig { image_size: 40, ..cfg.clone() }, 0).is_err());
    assert!(CoarseNet::new(&CoarseConfig { mlp_widths: vec![16, 2], ..cfg }, 0).is_err());
}

#[test]
fn zero_weight_pyramid_is_constant_per_channel() {
    let mut net = CoarseNet::new(&tiny_config(), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..net.params.len() {
        let l = net.params.layer_mut(i);
        if l.kind != LayerKind::Dense {
            l.weight.data_mut().fill(0.0);
            l.bias.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
        }
    }
    let img = Tensor::from_vec(&[3, 32, 32], (0..3 * 32 * 32).map(|i| (i % 7) as f32 / 7.0).collect()).unwrap();
    for stage in net.hourglass_forward(&img).unwrap().stages {
        let plane = stage.shape()[1] * stage.shape()[2];
        for ch in stage.data().chunks(plane) {
            assert!(ch.iter().all(|&v| v == ch[0]));
        }
    }
}

#[test]
fn zero_mlp_predicts_one_half_and_fusion_is_mean() {
    let s = capsule_sample(&[0], 32);
    let net = constant_net(&tiny_config(), 0.0);
    let pyr: Vec<FeaturePyramid> = s.images.iter().map(|i| net.hourglass_forward(i).unwrap()).collect();
    for p in [[0.0, 0.0, 0.0], [15.0, -3.0, 7.0], [100.0, 100.0, 100.0]] {
        let q = net.query_point(&pyr, &s.cameras, p, &s.bounds).unwrap();
        assert_eq!(q.fused, 0.5);
    }

    let s = capsule_sample(&[0, 1], 32);
    let net = CoarseNet::new(&tiny_config(), 4).unwrap();
    let pyr: Vec<FeaturePyramid> = s.images.iter().map(|i| net.hourglass_forward(i).unwrap()).collect();
    let q = net.query_point(&pyr, &s.cameras, [1.0, 2.0, 3.0], &s.bounds).unwrap();
    let views: Vec<f64> = q.per_view.iter().map(|v| v.unwrap()).collect();
    assert_eq!(q.fused, (views[0] + views[1]) / 2.0);
    assert!((0.0..=1.0).contains(&q.fused));
}

#[test]
fn views_are_independent() {
    let s = capsule_sample(&[0, 1], 32);
    let net = CoarseNet::new(&tiny_config(), 5).unwrap();
    let mut pyr: Vec<FeaturePyramid> = s.images.iter().map(|i| net.hourglass_forward(i).unwrap()).collect();
    let pts = [[1.0, 2.0, 3.0], [-5.0, 0.0, 2.0]];
    let before = net.query_views(&pyr, &s.cameras, &pts, &s.bounds).unwrap();
    for t in &mut pyr[1].stages {
        t.data_mut().fill(0.0);
    }
    let after = net.query_views(&pyr, &s.cameras, &pts, &s.bounds).unwrap();
    for (b, a) in before.iter().zip(&after) {
        assert_eq!(b[0], a[0]);
        assert_ne!(b[1], a[1]);
    }
}

#[test]
fn translation_covariance() {
    let s = capsule_sample(&[0, 1], 32);
    let net = CoarseNet::new(&tiny_config(), 6).unwrap();
    let pyr: Vec<FeaturePyramid> = s.images.iter().map(|i| net.hourglass_forward(i).unwrap()).collect();
    let d = [8.0, -16.0, 4.0];
    let moved_bounds = CubeBounds::centered(d, 20.0).unwrap();
    let moved: Vec<Camera> = orthographic_rig(4, 32, d, 20.0).unwrap().into_iter().take(2).collect();
    let pts: Vec<Point3> = vec![[1.0, 2.0, 3.0], [-5.0, 0.0, 2.0], [0.0, 9.0, -4.0]];
    let shifted: Vec<Point3> = pts.iter().map(|&p| add(p, d)).collect();
    let a = net.query_views(&pyr, &s.cameras, &pts, &s.bounds).unwrap();
    let b = net.query_views(&pyr, &moved, &shifted, &moved_bounds).unwrap();
    for (x, y) in a.iter().flatten().zip(b.iter().flatten()) {
        assert!((x.unwrap() - y.unwrap()).abs() < 1e-6);
    }
}

#[test]
fn degenerate_views_are_skipped() {
    let s = capsule_sample(&[0], 32);
    let net = CoarseNet::new(&tiny_config(), 7).unwrap();
    let pyr = net.hourglass_forward(&s.images[0]).unwrap();
    let mut pin = s.cameras[0].clone();
    pin.projection = Projection::Pinhole { focal: 40.0 };
    pin.translation[2] = 30.0;
    let behind = [0.0, 0.0, 40.0];
    assert!(pin.project(behind).is_err());
    let both = [pyr.clone(), pyr.clone()];
    let q = net.query_point(&both, &[s.cameras[0].clone(), pin.clone()], behind, &s.bounds).unwrap();
    assert!(q.per_view[0].is_some() && q.per_view[1].is_none());
    assert_eq!(q.fused, q.per_view[0].unwrap());
    assert!(matches!(net.query_point(&[pyr], &[pin], behind, &s.bounds), Err(Error::Query(_))));
}

#[test]
fn loss_closed_forms() {
    let s = capsule_sample(&[0, 1], 32);
    let cfg = tiny_config();
    let half = constant_net(&cfg, 0.0);
    let pts: Vec<LabeledPoint> =
        (0..40).map(|i| LabeledPoint { position: [i as f64 * 0.5 - 10.0, 1.0, 0.0], label: (i % 2) as u8 }).collect();
    assert!((half.coarse_loss(&s, &pts).unwrap() - 0.25).abs() < 1e-7);

    let ones: Vec<LabeledPoint> = pts.iter().map(|p| LabeledPoint { label: 1, ..*p }).collect();
    assert!(constant_net(&cfg, 40.0).coarse_loss(&s, &ones).unwrap() < 1e-12);

    let net = CoarseNet::new(&cfg, 8).unwrap();
    let mut shuffled = pts.clone();
    shuffled.reverse();
    let (a, b) = (net.coarse_loss(&s, &pts).unwrap(), net.coarse_loss(&s, &shuffled).unwrap());
    assert!((a - b).abs() < 1e-6);
    assert!(matches!(net.coarse_loss(&s, &[]), Err(Error::Usage(_))));
}

fn nudge(net: &mut CoarseNet<f64>, layer: usize, bias: bool, i: usize, delta: f64) {
    let l = net.params.layer_mut(layer);
    let t = if bias { &mut l.bias } else { &mut l.weight };
    t.data_mut()[i] += delta;
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let cfg = CoarseConfig { stages: 1, channels: 2, image_size: 8, mlp_widths: vec![4, 1], ..tiny_config() };
    let s = capsule_sample(&[0, 1], 8);
    let mut net = CoarseNet::new(&cfg, 9).unwrap().cast::<f64>();
    // Nonzero biases keep background activations off the activation kink.
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for i in 0..net.params.len() {
        net.params.layer_mut(i).bias.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    }
    let pts = coarse_training_points(&s, &CoarseConfig { point_count: 12, ..cfg.clone() }, 3).unwrap();
    let loss_of = |n: &CoarseNet<f64>| {
        let mut g = Graph::<f64>::new();
        let l = n.loss_graph(&mut g, &[(&s, &pts)]).unwrap();
        g.value(l).data()[0]
    };
    let mut g = Graph::<f64>::new();
    let l = net.loss_graph(&mut g, &[(&s, &pts)]).unwrap();
    g.backward(l).unwrap();
    let mut analytic = net.params.clone();
    g.accumulate_into(&mut analytic);

    let mut checked = 0;
    for layer in 0..net.params.len() {
        for bias in [false, true] {
            let t = if bias { &analytic.layer(layer).bias } else { &analytic.layer(layer).weight };
            for _ in 0..3 {
                let i = rng.random_range(0..t.len());
                let ga = t.grad().unwrap()[i];
                let h = 1e-6;
                let mut plus = net.clone();
                let mut minus = net.clone();
                nudge(&mut plus, layer, bias, i, h);
                nudge(&mut minus, layer, bias, i, -h);
                let gn = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                let rel = (ga - gn).abs() / ga.abs().max(gn.abs()).max(1e-8);
                assert!(rel < 1e-3 || (ga - gn).abs() < 1e-9, "layer {layer} bias {bias}: {ga} vs {gn}");
                checked += 1;
            }
        }
    }
    assert!(checked >= 20);
}

#[test]
fn zero_learning_rate_and_determinism() {
    let s = capsule_sample(&[0, 1], 32);
    let cfg = CoarseConfig { lr: 0.0, ..tiny_config() };
    let (net, trace) = train_coarse(std::slice::from_ref(&s), &cfg, 11, &mut |_| {}).unwrap();
    assert_eq!(net.params, CoarseNet::new(&cfg, 11).unwrap().params);
    assert_eq!(trace.len(), 3);

    let cfg = tiny_config();
    let (a, ta) = train_coarse(std::slice::from_ref(&s), &cfg, 12, &mut |_| {}).unwrap();
    let (b, tb) = train_coarse(std::slice::from_ref(&s), &cfg, 12, &mut |_| {}).unwrap();
    assert_eq!(ta, tb);
    assert_eq!(a.params, b.params);
    assert!(train_coarse(&[], &cfg, 0, &mut |_| {}).is_err());
}

#[test]
fn nan_parameters_abort_training() {
    let s = capsule_sample(&[0], 32);
    let mut net = CoarseNet::new(&tiny_config(), 13).unwrap();
    net.params.layer_mut(0).weight.data_mut()[0] = f32::NAN;
    let err = continue_coarse(&mut net, std::slice::from_ref(&s), 0, &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::Diverged { epoch: 0, .. }), "{err}");
}

#[test]
fn constant_zero_model_reconstructs_nothing() {
    let s = capsule_sample(&[0, 1], 32);
    let net = constant_net(&tiny_config(), -40.0);
    let (grid, mesh) = reconstruct_coarse(&net, &s.images, &s.cameras, 16, &s.bounds).unwrap();
    assert_eq!(grid.occupied_count(), 0);
    assert!(mesh.is_empty());
}

#[test]
fn overfits_one_sample_and_reconstructs_it() {
    let s = capsule_sample(&[0, 1], 32);
    let cfg = CoarseConfig {
        views: 2,
        image_size: 32,
        point_count: 256,
        epochs: 200,
        decay_epoch: 150,
        batch: 1,
        ..CoarseConfig::desk()
    };
    let (net, trace) = train_coarse(std::slice::from_ref(&s), &cfg, 1, &mut |_| {}).unwrap();
    let last = *trace.last().unwrap();
    assert!(last < 0.05, "final loss {last}");
    let (grid, mesh) = reconstruct_coarse(&net, &s.images, &s.cameras, 64, &s.bounds).unwrap();
    mesh.check_watertight().unwrap();
    let v = iou(&mesh, &s.gt, 64, &s.bounds).unwrap();
    assert!(v >= 0.8, "iou {v}");

    let (fine, _) = reconstruct_coarse(&net, &s.images, &s.cameras, 128, &s.bounds).unwrap();
    let frac = |g: &occufield::geometry::VoxelGrid| g.occupied_count() as f64 / g.values.len() as f64;
    assert!((frac(&fine) - frac(&grid)).abs() / frac(&grid) <= 0.05);
}
