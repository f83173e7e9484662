use occufield::geometry::{closest_on_triangle, dist, sample_surface, CubeBounds, Point3, TriMesh};
use occufield::metrics::{
    chamfer_l2, chamfer_points, dist2, error_heatmap_export, evaluate, iou, p2s, vertex_distances, EvalReport,
    MetricConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sphere(r: f64) -> TriMesh {
    TriMesh::octasphere([0.0; 3], r, 5).unwrap()
}

fn brute_distance(mesh: &TriMesh, p: Point3) -> f64 {
    (0..mesh.triangles.len())
        .map(|t| {
            let [a, b, c] = mesh.corners(t);
            dist(p, closest_on_triangle(p, a, b, c))
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn p2s_identical_is_zero() {
    let s = sphere(10.0);
    assert!(p2s(&s, &s, 2000, 1).unwrap() < 1e-9);
}

#[test]
fn p2s_concentric_spheres() {
    let d = p2s(&sphere(10.0), &sphere(12.0), 10_000, 2).unwrap();
    assert!((d - 2.0).abs() <= 0.05, "p2s {d}");
}

#[test]
fn p2s_matches_brute_force() {
    let pred = TriMesh::octasphere([0.5, 0.2, -0.3], 4.0, 2).unwrap();
    let gt = TriMesh::cuboid([-3.0, -2.5, -3.5], [3.0, 4.0, 2.0]).unwrap();
    assert!(pred.triangles.len() <= 200);
    let (n, seed) = (700, 3);
    let samples = sample_surface(&pred, n, seed).unwrap();
    let brute = samples.iter().map(|&p| brute_distance(&gt, p)).sum::<f64>() / n as f64;
    assert!((p2s(&pred, &gt, n, seed).unwrap() - brute).abs() < 1e-9);
}

#[test]
fn p2s_is_stable_in_sample_count() {
    let pred = TriMesh::octasphere([0.3, 0.0, 0.0], 9.0, 4).unwrap();
    let gt = sphere(10.0);
    let a = p2s(&pred, &gt, 5000, 4).unwrap();
    let b = p2s(&pred, &gt, 10_000, 4).unwrap();
    assert!((a - b).abs() / b < 0.02);
    assert_eq!(a, p2s(&pred, &gt, 5000, 4).unwrap());
}

#[test]
fn chamfer_closed_forms() {
    let a = vec![[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]];
    assert_eq!(chamfer_points(&a, &a).unwrap(), 0.0);
    assert_eq!(chamfer_points(&[[0.0; 3]], &[[3.0, 4.0, 0.0]]).unwrap(), 25.0);
    assert!(chamfer_points(&[], &a).is_err());
}

#[test]
fn chamfer_matches_brute_force_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let a: Vec<Point3> = (0..500).map(|_| std::array::from_fn(|_| rng.random_range(-10.0..10.0))).collect();
        let b: Vec<Point3> = (0..437).map(|_| std::array::from_fn(|_| rng.random_range(-8.0..12.0))).collect();
        let one = |x: &[Point3], y: &[Point3]| {
            x.iter().map(|&p| y.iter().map(|&q| dist2(p, q)).fold(f64::INFINITY, f64::min)).sum::<f64>()
                / x.len() as f64
        };
        assert_eq!(chamfer_points(&a, &b).unwrap(), 0.5 * (one(&a, &b) + one(&b, &a)));
    }
}

#[test]
fn chamfer_meshes_symmetric_and_zero_on_identity() {
    let (a, b) = (sphere(10.0), TriMesh::cuboid([-8.0; 3], [9.0; 3]).unwrap());
    assert_eq!(chamfer_l2(&a, &a, 3000, 6).unwrap(), 0.0);
    assert_eq!(chamfer_l2(&a, &b, 3000, 6).unwrap(), chamfer_l2(&b, &a, 3000, 6).unwrap());
    assert!(chamfer_l2(&a, &b, 3000, 6).unwrap() > 0.0);
}

#[test]
fn iou_cases() {
    let bounds = CubeBounds::centered([0.0; 3], 20.0).unwrap();
    let cube = TriMesh::cuboid([-8.0; 3], [8.0; 3]).unwrap();
    assert_eq!(iou(&cube, &cube, 64, &bounds).unwrap(), 1.0);
    let left = TriMesh::cuboid([-15.0; 3], [-5.0; 3]).unwrap();
    let right = TriMesh::cuboid([5.0; 3], [15.0; 3]).unwrap();
    assert_eq!(iou(&left, &right, 64, &bounds).unwrap(), 0.0);
    assert_eq!(iou(&TriMesh::empty(), &TriMesh::empty(), 64, &bounds).unwrap(), 1.0);
    assert_eq!(iou(&TriMesh::empty(), &cube, 64, &bounds).unwrap(), 0.0);
}

#[test]
fn iou_shifted_cube_is_one_third() {
    let bounds = CubeBounds::centered([0.0; 3], 20.0).unwrap();
    let a = TriMesh::cuboid([-10.0, -5.0, -5.0], [0.0, 5.0, 5.0]).unwrap();
    let b = a.translated([5.0, 0.0, 0.0]);
    let v = iou(&a, &b, 64, &bounds).unwrap();
    assert!((v - 1.0 / 3.0).abs() <= 0.02, "iou {v}");
    assert_eq!(v, iou(&b, &a, 64, &bounds).unwrap());
}

#[test]
fn iou_monotone_under_erosion() {
    let bounds = CubeBounds::centered([0.0; 3], 20.0).unwrap();
    let outer = sphere(15.0);
    let mut last = 1.0;
    for r in [14.0, 12.0, 10.0, 7.0, 4.0] {
        let v = iou(&outer, &sphere(r), 64, &bounds).unwrap();
        assert!(v <= last);
        last = v;
    }
}

#[test]
fn iou_grid_bounds_mismatch() {
    let b1 = CubeBounds::centered([0.0; 3], 20.0).unwrap();
    let b2 = CubeBounds::centered([1.0, 0.0, 0.0], 20.0).unwrap();
    let g = occufield::geometry::voxelize(&sphere(10.0), 32, &b1).unwrap();
    assert!(iou(&g, &g, 32, &b1).unwrap() == 1.0);
    assert!(iou(&g, &sphere(10.0), 32, &b2).is_err());
}

#[test]
fn heatmap_export() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("heat.obj");
    let s = sphere(10.0);
    assert_eq!(error_heatmap_export(&s, &s, &path).unwrap(), 0.0);
    let (mesh, colors) = TriMesh::parse_obj(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(mesh.vertices.len(), s.vertices.len());
    assert!(colors.unwrap().iter().all(|c| *c == [0.0, 0.0, 1.0]));

    let pred = TriMesh::octasphere([1.0, 0.0, 0.0], 11.0, 3).unwrap();
    let max = error_heatmap_export(&pred, &s, &path).unwrap();
    let recomputed = vertex_distances(&pred, &s).into_iter().fold(0.0, f64::max);
    assert!((max - recomputed).abs() <= 1e-12 * recomputed);
    let (mesh, colors) = TriMesh::parse_obj(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(mesh.vertices.len(), pred.vertices.len());
    assert!(colors.unwrap().iter().any(|c| c[0] == 1.0));
}

#[test]
fn evaluate_and_csv() {
    let bounds = CubeBounds::centered([0.0; 3], 20.0).unwrap();
    let s = sphere(10.0);
    let cfg = MetricConfig { sample_count: 2000, ..MetricConfig::default() };
    let r = evaluate("s0", &s, &s, &bounds, &cfg).unwrap();
    assert_eq!(r.iou, 1.0);
    assert!(r.p2s_cm < 1e-9 && r.chamfer_l2 == 0.0);
    let csv = EvalReport::to_csv(&[r.clone(), r]);
    assert!(csv.starts_with("sample_id,p2s_cm,chamfer_l2,iou\ns0,0.000000,0.000000,1.000000\n"));
    assert!(p2s(&TriMesh::empty(), &s, 10, 0).is_err());
}
