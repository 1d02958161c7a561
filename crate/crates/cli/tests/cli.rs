use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use satocc::geo::{EgoPose, GeoMosaic, MosaicMeta};
use satocc::occ::{write_boxes, write_occ, Box3D, OccGrid};
use serde_json::Value;

fn satocc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_satocc")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(out.stderr.trim_ascii()).expect("stderr holds one JSON error")
}

fn write_mosaic(dir: &Path) {
    let meta = MosaicMeta {
        crs: MosaicMeta::CRS.into(),
        origin_x: -64.0,
        origin_y: 64.0,
        meters_per_pixel: 0.5,
        tile_size: 64,
        rows: 4,
        cols: 4,
    };
    GeoMosaic::from_fn(meta, |x, y| [(x * 3 % 256) as u8, (y * 5 % 256) as u8, 90]).unwrap().save(dir).unwrap();
}

fn write_poses(path: &Path, offsets: &[(f64, f64)]) {
    let lines: Vec<String> = offsets
        .iter()
        .enumerate()
        .map(|(i, &(e, n))| {
            let pose = EgoPose::new(i as f64, 0.0, 0.0, 0.5).unwrap().offset_ground(e, n).unwrap();
            format!(r#"{{"token":"p{i}","timestamp":{i},"lat":{},"lon":{},"yaw":0.5}}"#, pose.lat, pose.lon)
        })
        .collect();
    fs::write(path, lines.join("\n")).unwrap();
}

#[test]
fn curate_two_poses() {
    let dir = tempfile::tempdir().unwrap();
    let (m, poses, out) = (dir.path().join("m"), dir.path().join("poses.jsonl"), dir.path().join("out"));
    write_mosaic(&m);
    write_poses(&poses, &[(0.0, 0.0), (2.0, -3.0)]);
    let o = satocc(&["curate", "--mosaic", p(&m), "--poses", p(&poses), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("p0.png").is_file() && out.join("p1.png").is_file());
    let summary: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["ok"], 2);
}

#[test]
fn curate_missing_mosaic() {
    let dir = tempfile::tempdir().unwrap();
    let poses = dir.path().join("poses.jsonl");
    write_poses(&poses, &[(0.0, 0.0)]);
    let o = satocc(&["curate", "--mosaic", p(dir.path()), "--poses", p(&poses), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["kind"], "mosaic-not-found");
}

#[test]
fn curate_off_mosaic_pose() {
    let dir = tempfile::tempdir().unwrap();
    let (m, poses, out) = (dir.path().join("m"), dir.path().join("poses.jsonl"), dir.path().join("out"));
    write_mosaic(&m);
    write_poses(&poses, &[(0.0, 0.0), (500.0, 0.0)]);
    let o = satocc(&["curate", "--mosaic", p(&m), "--poses", p(&poses), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["entries"][1]["status"], "error");
    assert_eq!(manifest["entries"][1]["error_kind"], "coverage");
}

fn grid_config(dir: &Path, dims: [usize; 3]) -> std::path::PathBuf {
    let path = dir.join("run.json");
    let cfg = serde_json::json!({
        "grid": { "dims": dims, "voxel_size": [0.4, 0.4, 0.4], "extent": [dims[0] as f64 * 0.4, dims[1] as f64 * 0.4], "z_min": -1.0 }
    });
    fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn sample_grid(seed: u8, dynamic: bool) -> OccGrid {
    let dims = [8, 6, 4];
    let classes = (0..8 * 6 * 4)
        .map(|i: usize| {
            let v = (i * 7 + seed as usize * 13) % 23;
            match v {
                0..=8 => 17,
                9..=15 => 11 + (v % 6) as u8,
                _ if dynamic => (v % 11) as u8,
                _ => 17,
            }
        })
        .collect();
    OccGrid::new(dims, classes).unwrap()
}

#[test]
fn genlabels_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let occ = dir.path().join("occ");
    fs::create_dir(&occ).unwrap();
    write_occ(&occ.join("a.occ"), &sample_grid(1, true)).unwrap();
    write_occ(&occ.join("b.occ"), &sample_grid(2, false)).unwrap();
    write_boxes(&occ.join("a.boxes.jsonl"), &[Box3D { center: [0.3, 0.2, 0.0], size: [1.5, 0.9, 1.6], yaw: 0.7, class_id: 4 }])
        .unwrap();
    let cfg = grid_config(dir.path(), [8, 6, 4]);
    let (o1, o2) = (dir.path().join("o1"), dir.path().join("o2"));
    for out in [&o1, &o2] {
        let o = satocc(&["genlabels", "--config", p(&cfg), "--occ", p(&occ), "--out", p(out)]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }

    // no dynamic voxels and no boxes: all-zero mask
    let d = image::open(o1.join("b.dynamic.png")).unwrap().to_luma8();
    assert_eq!(d.dimensions(), (8, 6));
    assert!(d.pixels().all(|p| p[0] == 0));
    let d = image::open(o1.join("a.dynamic.png")).unwrap().to_luma8();
    assert!(d.pixels().any(|p| p[0] == 1));

    // stats agree with a direct count of the payload bytes
    let bytes = fs::read(occ.join("a.occ")).unwrap();
    let mut counts = [0u64; 18];
    for &b in &bytes[16..] {
        counts[b as usize] += 1;
    }
    let stats: Value = serde_json::from_str(&fs::read_to_string(o1.join("a.stats.json")).unwrap()).unwrap();
    let reported: Vec<u64> = stats["class_counts"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert_eq!(reported, counts);
    assert_eq!(stats["free_voxels"], counts[17]);
    assert_eq!(stats["static_voxels"], counts[11..17].iter().sum::<u64>());

    let mut names: Vec<_> = fs::read_dir(&o1).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 8);
    for n in names {
        assert_eq!(fs::read(o1.join(&n)).unwrap(), fs::read(o2.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn genlabels_reports_bad_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("x.occ"), b"OCC2\0\0\0\0\0\0\0\0\0\0\0\0").unwrap();
    let o = satocc(&["genlabels", "--occ", p(dir.path()), "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_json(&o);
    assert_eq!(e["kind"], "format");
    assert!(e["message"].as_str().unwrap().contains("x.occ"));
}

fn eval_dirs(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let (a, b) = (dir.join("pred"), dir.join("gt"));
    fs::create_dir(&a).unwrap();
    fs::create_dir(&b).unwrap();
    for (i, t) in ["s1", "s2"].iter().enumerate() {
        write_occ(&a.join(format!("{t}.occ")), &sample_grid(i as u8, true)).unwrap();
        write_occ(&b.join(format!("{t}.occ")), &sample_grid(i as u8 + 3, true)).unwrap();
    }
    (a, b)
}

#[test]
fn eval_identical_copies_score_one() {
    let dir = tempfile::tempdir().unwrap();
    let (_, gt) = eval_dirs(dir.path());
    let cfg = grid_config(dir.path(), [8, 6, 4]);
    let o = satocc(&["eval", "--config", p(&cfg), "--pred", p(&gt), "--gt", p(&gt)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["pooled"]["miou"], 1.0);
    assert_eq!(r["samples"].as_array().unwrap().len(), 2);
}

#[test]
fn eval_is_symmetric() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt) = eval_dirs(dir.path());
    let cfg = grid_config(dir.path(), [8, 6, 4]);
    let a = satocc(&["eval", "--config", p(&cfg), "--pred", p(&pred), "--gt", p(&gt)]);
    let b = satocc(&["eval", "--config", p(&cfg), "--pred", p(&gt), "--gt", p(&pred)]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn eval_lists_missing_samples() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt) = eval_dirs(dir.path());
    fs::remove_file(pred.join("s2.occ")).unwrap();
    let cfg = grid_config(dir.path(), [8, 6, 4]);
    let o = satocc(&["eval", "--config", p(&cfg), "--pred", p(&pred), "--gt", p(&gt)]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr_json(&o);
    assert_eq!(e["kind"], "sample-mismatch");
    assert!(e["message"].as_str().unwrap().contains("s2"));
}

#[test]
fn eval_observe_mask() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt) = eval_dirs(dir.path());
    for t in ["s1", "s2"] {
        fs::write(gt.join(format!("{t}.mask")), vec![0u8; 8 * 6 * 4]).unwrap();
    }
    let cfg = grid_config(dir.path(), [8, 6, 4]);
    let o = satocc(&["eval", "--config", p(&cfg), "--pred", p(&pred), "--gt", p(&gt), "--observe-mask"]);
    assert_eq!(o.status.code(), Some(0));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["pooled"]["defined_classes"], 0);
    assert!(r["pooled"]["miou"].is_null());
}

#[test]
fn eval_table_row() {
    let row = "10.8,45.9,20.5,46.6,51.1,23.0,22.7,23.1,21.4,33.3,38.2,82.6,43.8,54.0,58.5,47.0,41.4";
    let o = satocc(&["eval", "--from-per-class", row]);
    assert_eq!(o.status.code(), Some(0));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((r["miou"].as_f64().unwrap() - 39.05).abs() < 0.02);
    assert!((r["d_miou"].as_f64().unwrap() - 30.59).abs() < 0.02);
    assert!((r["s_miou"].as_f64().unwrap() - 54.55).abs() < 0.02);
    let line = String::from_utf8(o.stderr).unwrap();
    assert!(line.contains("mIoU 39.05") && line.contains("S-mIoU 54.55"), "{line}");
}

#[test]
fn verify_default_passes() {
    let o = satocc(&["verify"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS ")).count(), 8);
}

#[test]
fn verify_perturbed_geometry_fails() {
    let o = satocc(&["verify", "--perturb-geometry", "--suite", "adjointness"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8(o.stdout).unwrap().starts_with("FAIL adjointness"));
}

#[test]
fn verify_report_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    for out in [&a, &b] {
        let o = satocc(&["verify", "--seed", "3", "--suite", "labels", "--suite", "gradients", "--out", p(out)]);
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn demo_fuse_writes_map() {
    let dir = tempfile::tempdir().unwrap();
    let o = satocc(&["demo-fuse", "--out", p(dir.path()), "--size", "16", "--seed", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let map = image::open(dir.path().join("dyn_map.png")).unwrap().to_luma8();
    assert_eq!(map.dimensions(), (16, 16));
    let s: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert!(s["fit"]["iou"].as_f64().unwrap() > 0.9);
    assert!(dir.path().join("weights.sawt").is_file());
}

#[test]
fn bench_reports_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = grid_config(dir.path(), [40, 40, 16]);
    let o = satocc(&["bench", "--config", p(&cfg), "--iters", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(r["uni_sa"]["splat_over_gather"].as_f64().unwrap() > 0.0);
}

#[test]
fn config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = grid_config(dir.path(), [10, 20, 4]);
    let first = satocc(&["config", "--config", p(&cfg), "--seed", "11"]);
    assert_eq!(first.status.code(), Some(0));
    let saved = dir.path().join("saved.json");
    fs::write(&saved, &first.stdout).unwrap();
    let second = satocc(&["config", "--config", p(&saved)]);
    assert_eq!(first.stdout, second.stdout);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"grid":{"dims":[10,10,4],"voxel_size":[0.4,0.4,0.4],"extent":[5.0,4.0],"z_min":-1.0}}"#).unwrap();
    let o = satocc(&["config", "--config", p(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["kind"], "config-invalid");
}
