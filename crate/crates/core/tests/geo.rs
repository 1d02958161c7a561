use std::f64::consts::PI;
use std::fs;

use proptest::prelude::*;
use satocc::geo::{
    curate, extract_oriented_slice, EgoPose, GeoMosaic, MosaicMeta, PoseRecord, SliceGeometry, SLICE_CENTER,
};

fn pose() -> impl Strategy<Value = EgoPose> {
    (-80.0..80.0f64, -179.0..179.0f64, -PI..PI).prop_map(|(lat, lon, yaw)| EgoPose::new(0.0, lat, lon, yaw).unwrap())
}

proptest! {
    #[test]
    fn pixel_ground_round_trip(p in pose(), u in -0.5..399.5f64, v in -0.5..399.5f64) {
        let g = SliceGeometry::new(&p).unwrap();
        let (u2, v2) = g.ground_to_pixel(g.pixel_to_ground(u, v));
        prop_assert!((u2 - u).hypot(v2 - v) < 1e-6);
        let (x, y) = g.pixel_to_mercator(u, v);
        let (u3, v3) = g.mercator_to_pixel(x, y);
        prop_assert!((u3 - u).hypot(v3 - v) < 1e-6);
    }

    #[test]
    fn ego_is_at_center_pixel(p in pose()) {
        let g = SliceGeometry::new(&p).unwrap();
        prop_assert_eq!(g.ground_to_pixel([0.0, 0.0]), (SLICE_CENTER, SLICE_CENTER));
        prop_assert_eq!(g.pixel_to_ground(SLICE_CENTER, SLICE_CENTER), [0.0, 0.0]);
    }

    #[test]
    fn row_span_is_79_8_m_at_equator(yaw in -PI..PI) {
        let g = SliceGeometry::new(&EgoPose::new(0.0, 0.0, 0.0, yaw).unwrap()).unwrap();
        let (x0, y0) = g.pixel_to_mercator(0.0, 200.0);
        let (x1, y1) = g.pixel_to_mercator(399.0, 200.0);
        prop_assert!(((x1 - x0).hypot(y1 - y0) - 79.8).abs() < 1e-6);
    }
}

fn mosaic() -> GeoMosaic {
    let meta = MosaicMeta {
        crs: MosaicMeta::CRS.into(),
        origin_x: -64.0,
        origin_y: 64.0,
        meters_per_pixel: 0.1,
        tile_size: 256,
        rows: 5,
        cols: 5,
    };
    GeoMosaic::from_fn(meta, |x, y| [(x % 251) as u8, (y % 241) as u8, ((x + 2 * y) % 256) as u8]).unwrap()
}

fn records(poses: &[(f64, f64, f64)]) -> Vec<PoseRecord> {
    poses
        .iter()
        .enumerate()
        .map(|(i, &(east, north, yaw))| {
            let p = EgoPose::new(i as f64, 0.0, 0.0, yaw).unwrap().offset_ground(east, north).unwrap();
            PoseRecord::from_pose(format!("s{i}"), &p)
        })
        .collect()
}

#[test]
fn curate_three_poses() {
    let dir = tempfile::tempdir().unwrap();
    let m = curate(&records(&[(0.0, 0.0, 0.0), (3.0, -2.0, 1.0), (-5.0, 4.0, -2.5)]), &mosaic(), dir.path()).unwrap();
    assert_eq!((m.ok_count(), m.failure_count()), (3, 0));
    for i in 0..3 {
        let img = image::open(dir.path().join(format!("s{i}.png"))).unwrap();
        assert_eq!((img.width(), img.height()), (400, 400));
        assert!(dir.path().join(format!("s{i}.json")).exists());
    }
}

#[test]
fn curate_records_coverage_failure() {
    let dir = tempfile::tempdir().unwrap();
    let m = curate(&records(&[(0.0, 0.0, 0.0), (30.0, 0.0, 0.0), (1.0, 1.0, 0.5)]), &mosaic(), dir.path()).unwrap();
    assert_eq!((m.ok_count(), m.failure_count()), (2, 1));
    let bad = &m.entries[1];
    assert_eq!(bad.token, "s1");
    assert_eq!(bad.error_kind.as_deref(), Some("coverage"));
    assert!(!dir.path().join("s1.png").exists());
}

#[test]
fn curate_is_byte_identical_on_rerun() {
    let recs = records(&[(0.0, 0.0, 0.3), (2.0, 2.0, -1.0)]);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    curate(&recs, &mosaic(), a.path()).unwrap();
    curate(&recs, &mosaic(), b.path()).unwrap();
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 5);
    for n in names {
        assert_eq!(fs::read(a.path().join(&n)).unwrap(), fs::read(b.path().join(&n)).unwrap());
    }
}

#[test]
fn slice_sees_mosaic_at_ego() {
    let m = mosaic();
    let s = extract_oriented_slice(&m, &EgoPose::new(0.0, 0.0, 0.0, 0.0).unwrap()).unwrap();
    // yaw 0 faces east; slice column 199.5 spans the ego, row 199.5 likewise
    let (px, py) = m.mercator_to_pixel(0.0, 0.0);
    assert_eq!((px, py), (640.0, 640.0));
    assert_eq!(s.pixels.dimensions(), (400, 400));
}
