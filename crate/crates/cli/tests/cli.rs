use std::path::Path;
use std::process::{Command, Output};

use occufield::geometry::{TriMesh, VoxelGrid};
use occufield_cli::pipeline::{COARSE_CSV, COMPARISON_CSV, REFINED_CSV};
use occufield_cli::{run_pipeline, RunConfig, StopAfter};

fn occufield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_occufield")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_sphere(dir: &Path, name: &str, r: f64) -> String {
    let p = dir.join(name);
    TriMesh::octasphere([0.0; 3], r, 4).unwrap().write_obj(&p).unwrap();
    p.display().to_string()
}

/// A run small enough for a unit-test budget.
fn tiny(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::preset("desk").unwrap();
    cfg.apply_overrides(&[
        "data.count=5".into(),
        "data.field_resolution=32".into(),
        "coarse.image_size=32".into(),
        "coarse.epochs=2".into(),
        "coarse.point_count=128".into(),
        "vsr.resolution=16".into(),
        "vsr.epochs=2".into(),
        "vsr.point_count=256".into(),
        "pipeline.coarse_resolution=24".into(),
        "metrics.sample_count=1000".into(),
        "metrics.iou_resolution=32".into(),
    ])
    .unwrap();
    cfg.dataset_dir = dir.join("data");
    cfg.out_dir = dir.join("out");
    cfg
}

#[test]
fn evaluate_identical_meshes() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_sphere(dir.path(), "a.obj", 10.0);
    let o = occufield(&["evaluate", "--pred", &a, "--gt", &a, "--id", "same"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert_eq!(out, "sample_id,p2s_cm,chamfer_l2,iou\nsame,0.000000,0.000000,1.000000\n");
}

#[test]
fn usage_errors_exit_two() {
    let o = occufield(&["reconstrut"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
    let o = occufield(&["evaluate", "--pred", "x.obj", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
    let o = occufield(&["sweep", "--param", "coarse.lr", "--values", "1,2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cannot sweep"));
}

#[test]
fn config_errors_exit_one_and_name_the_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "preset = desk\nvsr.sigma = 3\n").unwrap();
    let o = occufield(&["gen-data", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("unknown key `vsr.sigma`"));

    let o = occufield(&["gen-data", "--set", "coarse.views=3", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("coarse.views"));

    let missing = dir.path().join("nope.obj");
    let o = occufield(&["evaluate", "--pred", missing.to_str().unwrap(), "--gt", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("does not exist"));
}

#[test]
fn refine_without_checkpoint_fails_fast() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_sphere(dir.path(), "a.obj", 10.0);
    let model = dir.path().join("model");
    let o = occufield(&["refine", "--model", model.to_str().unwrap(), "--coarse", &a, "--out", "x.obj"]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("precondition") && e.contains("vsr.ckpt"), "{e}");
}

#[test]
fn voxelize_writes_a_grid() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_sphere(dir.path(), "a.obj", 10.0);
    let out = dir.path().join("a.ovox");
    let o = occufield(&[
        "voxelize",
        "--mesh",
        &a,
        "--out",
        out.to_str().unwrap(),
        "--resolution",
        "16",
        "--half-extent",
        "12",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let g = VoxelGrid::read(&out).unwrap();
    assert_eq!(g.resolution, 16);
    assert!(g.occupied_count() > 0);
}

#[test]
fn config_file_round_trips_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, cfg.to_text()).unwrap();
    assert_eq!(RunConfig::load(&path).unwrap(), cfg);
    let data = dir.path().join("gen");
    let o = occufield(&["gen-data", "--config", path.to_str().unwrap(), "--out", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("stage=gen-data samples=5 train=4 test=1"));
}

#[test]
fn pipeline_emits_coarse_and_refined_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.set("pipeline.coarse_source", "corrupted").unwrap();
    let mut lines = Vec::new();
    let report = run_pipeline(&cfg, &mut |l| lines.push(l.to_string())).unwrap();
    let refined = report.refined.as_ref().unwrap();
    assert_eq!(report.coarse.len(), 1);
    assert_eq!(refined.len(), 1);
    assert_eq!(report.coarse[0].sample_id, refined[0].sample_id);
    for f in [COARSE_CSV, REFINED_CSV, COMPARISON_CSV, "models/vsr.ckpt", "models/vsr_loss.csv", "run.cfg"] {
        assert!(cfg.out_dir.join(f).exists(), "{f}");
    }
    let cmp = std::fs::read_to_string(cfg.out_dir.join(COMPARISON_CSV)).unwrap();
    assert_eq!(cmp.lines().count(), 4);
    assert!(cmp.starts_with("metric,coarse,refined\np2s_cm,"));
    assert!(lines.iter().any(|l| l.starts_with("stage=train-vsr epoch=2 loss=")));

    let mut stop = tiny(dir.path());
    stop.out_dir = dir.path().join("stop");
    stop.set("pipeline.stop_after", "coarse").unwrap();
    assert_eq!(stop.pipeline.stop_after, StopAfter::Coarse);
    let report = run_pipeline(&stop, &mut |_| {}).unwrap();
    assert!(report.refined.is_none());
    assert!(stop.out_dir.join("models/coarse.ckpt").exists());
    assert!(!stop.out_dir.join(REFINED_CSV).exists());
}
