use std::f64::consts::PI;

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracles;
use super::Check;
use crate::error::Result;
use crate::fusion::{
    ddf_fuse, ddf_fuse_tape, dsa_refine_tape, dual_feature_fuse_tape, dyn_head_tape, fit_dyn_head, soft_gate_tape,
    synthetic_dyn_scene, DynAttention, FusionConfig, FusionVars, FusionWeights,
};
use crate::geo::{extract_oriented_slice, EgoPose, GeoMosaic, MosaicMeta, SliceGeometry, GROUND_RESOLUTION_M, SLICE_PX};
use crate::losses::{aggregate, ce_loss_tape, dice_loss_tape, dyn_loss_tape, total_loss_tape, LossWeights};
use crate::occ::{self, BevMap, BevSpec, Box3D, OccGrid};
use crate::tensor::{finite_diff_check_many, Tape, Tensor, Var};
use crate::view::{
    adjointness_check, bev_coverage, in_frustum_mask, lss_splat_rig, uni_sa_gather, AdjointOptions, CameraRig,
    Frustum, SamplePoints,
};

pub(super) fn table() -> Result<Vec<Check>> {
    let rows = [
        ("SA-Occ V1", oracles::TABLE4_SA_OCC_V1, oracles::TABLE1_SA_OCC_V1),
        ("FlashOcc M1", oracles::TABLE4_FLASHOCC_M1, oracles::TABLE1_FLASHOCC_M1),
    ];
    let mut checks = Vec::new();
    for (label, per_class, (m, d, s)) in rows {
        let r = aggregate(&per_class)?;
        let got = [r.miou, r.d_miou, r.s_miou].map(|v| v.unwrap_or(f64::NAN));
        for ((metric, g), want) in ["mIoU", "D-mIoU", "S-mIoU"].iter().zip(got).zip([m, d, s]) {
            checks.push(
                Check::at_most(format!("{label} {metric}"), (g - want).abs(), 0.02)
                    .with_detail(format!("aggregate {g:.4}, published {want:.2}")),
            );
        }
    }
    Ok(checks)
}

fn random_grid(rng: &mut impl Rng) -> Result<OccGrid> {
    let dims = [16, 16, 8];
    let free_p = rng.random_range(0.3..0.9);
    let classes = (0..dims.iter().product::<usize>())
        .map(|_| if rng.random_bool(free_p) { occ::classes::FREE } else { rng.random_range(0..17) })
        .collect();
    OccGrid::new(dims, classes)
}

fn random_boxes(rng: &mut impl Rng, spec: &BevSpec) -> Vec<Box3D> {
    let (hx, hy) = (spec.nx as f64 * spec.cell_x / 2.0, spec.ny as f64 * spec.cell_y / 2.0);
    (0..rng.random_range(0..5))
        .map(|_| Box3D {
            center: [rng.random_range(-hx..hx), rng.random_range(-hy..hy), rng.random_range(-1.0..1.0)],
            size: [rng.random_range(0.2..4.0), rng.random_range(0.2..2.5), rng.random_range(0.5..3.0)],
            yaw: rng.random_range(-PI..PI),
            class_id: rng.random_range(0..=10),
        })
        .collect()
}

pub(super) fn labels(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1abe1);
    let samples = 100;
    let mut bad = [0usize; 4];
    let mut cells = 0usize;
    for _ in 0..samples {
        let grid = random_grid(&mut rng)?;
        let boxes = random_boxes(&mut rng, &grid.bev_spec());
        let [nx, ny, nz] = grid.dims();
        cells += nx * ny;

        let mask = occ::static_mask(&grid);
        let heights = occ::height_map(&grid);
        let sem = occ::semantic_map(&grid, &heights)?;
        let dynamic = occ::dynamic_bev_mask(&grid, &boxes);

        let o_mask = oracles::static_mask(&grid);
        let o_heights = oracles::height_map(&grid);
        let o_sem = oracles::semantic_map(&grid);
        let o_dyn = oracles::dynamic_mask(&grid, &boxes);
        for i in 0..nx {
            for j in 0..ny {
                bad[0] += (0..nz).filter(|&k| mask.get(i, j, k) != o_mask[i][j][k]).count();
                bad[1] += (heights.get(i, j).map(usize::from) != o_heights[i][j]) as usize;
                bad[2] += (*sem.get(i, j) != o_sem[i][j]) as usize;
                bad[3] += (*dynamic.get(i, j) != o_dyn[i][j]) as usize;
            }
        }
    }
    let names = ["static mask", "height map", "semantic map", "dynamic mask"];
    Ok(names
        .iter()
        .zip(bad)
        .map(|(n, b)| {
            Check::at_most(format!("{n} mismatches"), b as f64, 0.0)
                .with_detail(format!("{samples} grids 16x16x8, {cells} columns"))
        })
        .collect())
}

pub(super) fn adjointness(seed: u64, perturb: bool) -> Result<Vec<Check>> {
    let run = |perturb_geometry: bool| -> Result<(f64, f64, usize)> {
        let (mut worst, mut weakest, mut configs) = (0.0f64, f64::INFINITY, 0);
        for v in 1..=6 {
            let rig = CameraRig::ring(v, 1.5, 90.0, 8, 8)?;
            for n in [4, 8, 16] {
                let spec = BevSpec::centered(n, 16.0 / n as f64);
                let points = SamplePoints::default_for(&spec);
                let opts = AdjointOptions {
                    seed: seed.wrapping_add(100 * v as u64 + n as u64),
                    perturb_geometry,
                    ..AdjointOptions::default()
                };
                let e = adjointness_check(&rig, &points, &spec, &opts)?.max_error();
                worst = worst.max(e);
                weakest = weakest.min(e);
                configs += 1;
            }
        }
        Ok((worst, weakest, configs))
    };
    let (worst, _, configs) = run(perturb)?;
    let (_, weakest, _) = run(true)?;
    Ok(vec![
        Check::below("splat/gather inner-product gap", worst, 1e-10)
            .with_detail(format!("{configs} rig/grid configs x 20 trials, 1-6 cameras, 4x4..16x16 BEV")),
        Check::above("shifted-rig control gap", weakest, 1e-3).with_detail("smallest gap over all configs"),
    ])
}

const GRAD_SEEDS: u64 = 10;
const FD_EPS: f64 = 1e-6;

/// Multiplies `out` by fixed random weights so the checked scalar depends
/// on every output element differently.
fn weighted(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let r = tape.leaf(Tensor::randn(&shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)));
    tape.mul(out, r)
}

fn grad_config() -> FusionConfig {
    FusionConfig { image_channels: 3, gate_channels: 4, bev_channels: 4, lss_channels: 3 }
}

fn random_mask(rng: &mut impl Rng, nx: usize, ny: usize) -> BevMap<bool> {
    BevMap { nx, ny, data: (0..nx * ny).map(|_| rng.random_bool(0.3)).collect() }
}

pub(super) fn gradients(seed: u64) -> Result<Vec<Check>> {
    let cfg = grad_config();
    type Case = fn(&mut ChaCha8Rng, &FusionWeights, u64, FusionConfig) -> Result<f64>;
    let cases: [(&str, Case); 7] = [
        ("soft_gate", |rng, w, rs, cfg| {
            let s = Tensor::randn(&[cfg.image_channels, 8, 8], 1.0, rng);
            let inputs = [s, w.gate_k.clone(), w.gate_scale.clone(), w.gate_shift.clone(), w.feat_k.clone()];
            finite_diff_check_many(
                |t, v| {
                    let fv = FusionVars { gate_k: v[1], gate_scale: v[2], gate_shift: v[3], feat_k: v[4], ..w.record(t) };
                    let out = soft_gate_tape(t, v[0], &fv)?;
                    weighted(t, out, rs)
                },
                &inputs,
                FD_EPS,
            )
        }),
        ("ddf_fuse", |rng, w, rs, cfg| {
            let (c, n) = (cfg.bev_channels, 6);
            let map = crate::tensor::ops::sigmoid(&Tensor::randn(&[1, n, n], 2.0, rng));
            let inputs = [Tensor::randn(&[c, n, n], 1.0, rng), Tensor::randn(&[c, n, n], 1.0, rng), map, w.ddf_k.clone()];
            finite_diff_check_many(
                |t, v| {
                    let fv = FusionVars { ddf_k: v[3], ..w.record(t) };
                    let out = ddf_fuse_tape(t, v[0], v[1], v[2], &fv)?;
                    weighted(t, out, rs)
                },
                &inputs,
                FD_EPS,
            )
        }),
        ("dsa_refine", |rng, w, rs, cfg| {
            let (c, n) = (cfg.bev_channels, 6);
            let inputs = [Tensor::randn(&[c, n, n], 1.0, rng), Tensor::randn(&[1, n, n], 1.0, rng), w.sa_k.clone()];
            finite_diff_check_many(
                |t, v| {
                    let fv = FusionVars { sa_k: v[2], ..w.record(t) };
                    let out = dsa_refine_tape(t, v[0], v[1], &fv)?;
                    weighted(t, out, rs)
                },
                &inputs,
                FD_EPS,
            )
        }),
        ("dual_feature_fuse", |rng, w, rs, cfg| {
            let (c, d, n) = (cfg.bev_channels, cfg.lss_channels, 6);
            let inputs = [Tensor::randn(&[d, n, n], 1.0, rng), Tensor::randn(&[c, n, n], 1.0, rng), w.dual_k.clone()];
            finite_diff_check_many(
                |t, v| {
                    let fv = FusionVars { dual_k: v[2], ..w.record(t) };
                    let out = dual_feature_fuse_tape(t, v[0], v[1], &fv)?;
                    weighted(t, out, rs)
                },
                &inputs,
                FD_EPS,
            )
        }),
        ("dice_loss", |rng, _, rs, _| {
            let probs = Tensor::uniform(&[1, 6, 6], 0.02, 0.98, rng);
            let target: std::sync::Arc<[f64]> = (0..36).map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 }).collect();
            finite_diff_check_many(
                |t, v| {
                    let l = dice_loss_tape(t, v[0], target.clone())?;
                    weighted(t, l, rs)
                },
                &[probs],
                FD_EPS,
            )
        }),
        ("dyn_loss", |rng, w, rs, cfg| {
            let n = 6;
            let street = Tensor::randn(&[cfg.bev_channels, n, n], 1.0, rng);
            let target = random_mask(rng, n, n);
            let inputs = [street, w.dyn_k.clone(), Tensor::randn(&[1], 0.5, rng)];
            finite_diff_check_many(
                |t, v| {
                    let fv = FusionVars { dyn_k: v[1], dyn_b: v[2], ..w.record(t) };
                    let (pre, _) = dyn_head_tape(t, v[0], &fv)?;
                    let l = dyn_loss_tape(t, pre, &target)?;
                    weighted(t, l, rs)
                },
                &inputs,
                FD_EPS,
            )
        }),
        ("total_loss", |rng, _, rs, _| {
            let (k, n) = (5, 4);
            let targets: Vec<usize> = (0..n * n).map(|_| rng.random_range(0..k)).collect();
            let mask = random_mask(rng, n, n);
            let lw = LossWeights {
                sem: rng.random_range(0.1..1.0),
                hgt: rng.random_range(0.01..0.2),
                depth: rng.random_range(0.01..0.2),
                dyn_: rng.random_range(0.1..0.5),
            };
            let inputs = [
                Tensor::randn(&[k, n, n], 1.0, rng),
                Tensor::uniform(&[1], 0.1, 2.0, rng),
                Tensor::uniform(&[1], 0.1, 2.0, rng),
                Tensor::randn(&[1, n, n], 1.0, rng),
                Tensor::uniform(&[1], 0.1, 2.0, rng),
            ];
            finite_diff_check_many(
                |t, v| {
                    let sem = ce_loss_tape(t, v[0], &targets, None)?;
                    let dyn_ = dyn_loss_tape(t, v[3], &mask)?;
                    let parts = [sem, v[1], v[2], dyn_, v[4]].map(|p| t.reshape(p, &[1]));
                    let [a, b, c, d, e] = parts;
                    let l = total_loss_tape(t, [a?, b?, c?, d?, e?], &lw)?;
                    weighted(t, l, rs)
                },
                &inputs,
                FD_EPS,
            )
        }),
    ];
    let mut checks = Vec::new();
    for (i, (name, case)) in cases.iter().enumerate() {
        let mut worst = 0.0f64;
        for s in 0..GRAD_SEEDS {
            let run_seed = seed.wrapping_mul(1_000_003).wrapping_add(1000 * i as u64 + s);
            let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
            let mut w = FusionWeights::random(&cfg, &mut rng);
            w.gate_scale = Tensor::uniform(w.gate_scale.shape(), 0.5, 1.5, &mut rng);
            w.gate_shift = Tensor::randn(w.gate_shift.shape(), 0.3, &mut rng);
            worst = worst.max(case(&mut rng, &w, run_seed ^ 0x5eed, cfg)?);
        }
        checks.push(
            Check::below(format!("{name} max relative error"), worst, 1e-5)
                .with_detail(format!("{GRAD_SEEDS} seeds, central differences eps {FD_EPS:e}")),
        );
    }
    Ok(checks)
}

pub(super) fn suppression(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5099);
    let cfg = FusionConfig::default();
    let (c, n) = (cfg.bev_channels, 12);
    let (mut changed, mut total, mut control) = (0usize, 0usize, f64::INFINITY);
    for trial in 0..10 {
        let w = FusionWeights::random(&cfg, &mut rng);
        let street = Tensor::randn(&[c, n, n], 1.0, &mut rng);
        let sat = Tensor::randn(&[c, n, n], 1.0, &mut rng);
        let scale = [1.0, 1e3, 1e6][trial % 3];
        let sat2 = Tensor::randn(&[c, n, n], scale, &mut rng);
        let closed = DynAttention { pre_activation: Tensor::full(&[1, n, n], 50.0), map: Tensor::ones(&[1, n, n]) };
        let a = ddf_fuse(&sat, &street, &closed, &w)?;
        let b = ddf_fuse(&sat2, &street, &closed, &w)?;
        changed += a.data().iter().zip(b.data()).filter(|(x, y)| x.to_bits() != y.to_bits()).count();
        total += a.len();

        let half = DynAttention::from_pre_activation(Tensor::zeros(&[1, n, n]));
        let a = ddf_fuse(&sat, &street, &half, &w)?;
        let b = ddf_fuse(&sat2, &street, &half, &w)?;
        control = control.min(a.max_abs_diff(&b)?);
    }
    Ok(vec![
        Check::at_most("elements changed by satellite perturbation (map = 1)", changed as f64, 0.0)
            .with_detail(format!("{total} outputs over 10 trials, bitwise comparison")),
        Check::above("output change at map = 0.5", control, 0.0).with_detail("control: perturbation is visible when the gate is open"),
    ])
}

const BANDS: [(f64, f64); 4] = [(0.0, 10.0), (10.0, 20.0), (20.0, 30.0), (30.0, 40.0)];

pub(super) fn coverage() -> Result<Vec<Check>> {
    let rig = CameraRig::synthetic_surround();
    let spec = BevSpec::centered(200, 0.4);
    let bins = Frustum::default_bins();
    let frusta = rig
        .cameras()
        .iter()
        .map(|cam| {
            let (h, w) = cam.image_size();
            Frustum::new(bins.clone(), Tensor::full(&[bins.len(), h, w], 1.0 / bins.len() as f64), Tensor::ones(&[1, h, w]))
        })
        .collect::<Result<Vec<_>>>()?;
    let lss = lss_splat_rig(&frusta, &rig, &spec)?;
    let points = SamplePoints::default_for(&spec);
    let features: Vec<Tensor> = frusta.iter().map(|f| f.context.clone()).collect();
    let uni = uni_sa_gather(&features, &rig, &points)?;
    let frustum_mask = in_frustum_mask(&rig, &points);
    let frustum_bev = Tensor::from_fn(&[1, spec.nx, spec.ny], |i| if frustum_mask.data[i] { 1.0 } else { 0.0 });

    let mut checks = Vec::new();
    let mut lss_cov = Vec::new();
    let mut gap = 0.0f64;
    for (k, &band) in BANDS.iter().enumerate() {
        let (l, u) = (bev_coverage(&lss, &spec, band)?, bev_coverage(&uni, &spec, band)?);
        gap = gap.max((u - bev_coverage(&frustum_bev, &spec, band)?).abs());
        lss_cov.push(l);
        let name = format!("uni-sa minus lss coverage, {}-{} m", band.0, band.1);
        let detail = format!("uni-sa {u:.4}, lss {l:.4}");
        checks.push(if k + 1 == BANDS.len() {
            Check::above(name, u - l, 0.0).with_detail(detail)
        } else {
            Check::at_least(name, u - l, 0.0).with_detail(detail)
        });
    }
    checks.insert(
        0,
        Check::below("lss coverage 30-40 m vs 0-10 m", lss_cov[3], lss_cov[0])
            .with_detail(format!("lss per band {lss_cov:.4?}")),
    );
    checks.push(Check::at_most("uni-sa coverage minus in-frustum fraction", gap, 1e-12));
    Ok(checks)
}

fn texture(px: usize, py: usize) -> [u8; 3] {
    let (x, y) = (px as f64, py as f64);
    let r = 127.5 + 60.0 * (2.0 * PI * x / 37.0).sin() + 50.0 * (2.0 * PI * y / 53.0).cos();
    let g = 127.5 + 70.0 * (2.0 * PI * (x + y) / 61.0).sin() + 30.0 * (2.0 * PI * (x - 2.0 * y) / 97.0).sin();
    let b = 127.5 + 90.0 * (2.0 * PI * (0.6 * x - 0.8 * y) / 45.0).cos();
    [r, g, b].map(|v| v.round().clamp(0.0, 255.0) as u8)
}

fn test_mosaic(f: impl Fn(usize, usize) -> [u8; 3]) -> Result<GeoMosaic> {
    let meta = MosaicMeta {
        crs: MosaicMeta::CRS.into(),
        origin_x: -64.0,
        origin_y: 64.0,
        meters_per_pixel: 0.1,
        tile_size: 256,
        rows: 5,
        cols: 5,
    };
    GeoMosaic::from_fn(meta, f)
}

fn bilinear_rgb(img: &RgbImage, u: f64, v: f64) -> Option<[f64; 3]> {
    let (w, h) = (img.width() as f64, img.height() as f64);
    if !(u >= 0.0 && v >= 0.0 && u <= w - 1.0 && v <= h - 1.0) {
        return None;
    }
    let (x0, y0) = (u.floor().min(w - 2.0), v.floor().min(h - 2.0));
    let (fx, fy) = (u - x0, v - y0);
    let mut acc = [0.0; 3];
    for (dx, dy, wt) in [(0, 0, (1.0 - fx) * (1.0 - fy)), (1, 0, fx * (1.0 - fy)), (0, 1, (1.0 - fx) * fy), (1, 1, fx * fy)] {
        let p = img.get_pixel(x0 as u32 + dx, y0 as u32 + dy);
        for c in 0..3 {
            acc[c] += wt * p[c] as f64;
        }
    }
    Some(acc)
}

fn channel_values(img: &RgbImage, c: usize) -> Vec<f64> {
    img.pixels().map(|p| p[c] as f64).collect()
}

/// Integer `(du, dv)` in `[-r, r]^2` maximizing the normalized cross
/// correlation of `b(u + du, v + dv)` against `a(u, v)` over the interior.
fn ncc_peak(a: &RgbImage, b: &RgbImage, r: i64) -> (i64, i64) {
    let n = a.width() as i64;
    let (av, bv) = (channel_values(a, 0), channel_values(b, 0));
    let at = |img: &[f64], u: i64, v: i64| img[(v * n + u) as usize];
    let mut best = (f64::NEG_INFINITY, (0, 0));
    for dv in -r..=r {
        for du in -r..=r {
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for v in 20..n - 20 {
                for u in 20..n - 20 {
                    xs.push(at(&av, u, v));
                    ys.push(at(&bv, u + du, v + dv));
                }
            }
            let mx = xs.iter().sum::<f64>() / xs.len() as f64;
            let my = ys.iter().sum::<f64>() / ys.len() as f64;
            let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
            for (x, y) in xs.iter().zip(&ys) {
                sxy += (x - mx) * (y - my);
                sxx += (x - mx) * (x - mx);
                syy += (y - my) * (y - my);
            }
            let ncc = sxy / (sxx * syy).sqrt();
            if ncc > best.0 {
                best = (ncc, (du, dv));
            }
        }
    }
    best.1
}

pub(super) fn slice_geometry(seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x511ce);
    let mosaic = test_mosaic(texture)?;
    let center = SLICE_PX as f64 / 2.0 - 0.5;
    let mut checks = Vec::new();

    // round trip and center anchoring over poses at several latitudes
    let (mut round_trip, mut anchor) = (0.0f64, 0.0f64);
    for lat in [0.0, 37.77, -33.9, 61.2] {
        for _ in 0..4 {
            let pose = EgoPose::new(0.0, lat, rng.random_range(-179.0..179.0), rng.random_range(-PI..PI))?;
            let g = SliceGeometry::new(&pose)?;
            for _ in 0..200 {
                let (u, v) = (rng.random_range(-0.5..399.5), rng.random_range(-0.5..399.5));
                let (x, y) = g.pixel_to_mercator(u, v);
                let (u2, v2) = g.mercator_to_pixel(x, y);
                round_trip = round_trip.max((u2 - u).hypot(v2 - v));
            }
            let (ex, ey) = g.ego_mercator();
            let (cx, cy) = g.pixel_to_mercator(center, center);
            anchor = anchor.max((cx - ex).abs().max((cy - ey).abs()));
        }
    }
    checks.push(Check::below("pixel->mercator->pixel round trip (px)", round_trip, 1e-6));
    checks.push(Check::at_most("center pixel offset from ego (mercator m)", anchor, 0.0));

    // one slice pixel per 0.2 m of ego motion
    let yaw = rng.random_range(-PI..PI);
    let pose = EgoPose::new(0.0, 0.0, 0.0, yaw)?;
    let base = extract_oriented_slice(&mosaic, &pose)?;
    let (s, c) = yaw.sin_cos();
    let step = GROUND_RESOLUTION_M;
    let fwd = extract_oriented_slice(&mosaic, &pose.offset_ground(step * c, step * s)?)?;
    let right = extract_oriented_slice(&mosaic, &pose.offset_ground(step * s, -step * c)?)?;
    let shift_fwd = ncc_peak(&base.pixels, &fwd.pixels, 3);
    let shift_right = ncc_peak(&base.pixels, &right.pixels, 3);
    // moving forward pushes content down one row, moving right pushes it left
    let err = (shift_fwd.0.abs() + (shift_fwd.1 - 1).abs() + (shift_right.0 + 1).abs() + shift_right.1.abs()) as f64;
    checks.push(
        Check::at_most("integer shift error for 0.2 m moves (px)", err, 0.0)
            .with_detail(format!("forward peak {shift_fwd:?}, right peak {shift_right:?}")),
    );

    // rotation equivariance against the yaw-0 slice
    let zero = extract_oriented_slice(&mosaic, &EgoPose::new(0.0, 0.0, 0.0, 0.0)?)?;
    let mut worst_mean = 0.0f64;
    for theta in [0.3, 1.1, 2.5, -2.0, -0.7] {
        let rot = extract_oriented_slice(&mosaic, &EgoPose::new(0.0, 0.0, 0.0, theta)?)?;
        let (s, c) = f64::sin_cos(theta);
        let (mut sum, mut count) = (0.0, 0usize);
        for v in 0..SLICE_PX {
            for u in 0..SLICE_PX {
                let (a, b) = (u as f64 - center, center - v as f64);
                if a.hypot(b) > 190.0 {
                    continue;
                }
                let (a0, b0) = (a * c - b * s, a * s + b * c);
                let Some(expect) = bilinear_rgb(&zero.pixels, center + a0, center - b0) else { continue };
                let got = rot.pixels.get_pixel(u as u32, v as u32);
                for ch in 0..3 {
                    sum += (got[ch] as f64 - expect[ch]).abs();
                    count += 1;
                }
            }
        }
        worst_mean = worst_mean.max(sum / count as f64);
    }
    checks.push(Check::below("rotation equivariance mean abs error (LSB)", worst_mean, 2.0));

    // a half turn is a 180 degree image flip
    let a = extract_oriented_slice(&mosaic, &EgoPose::new(0.0, 0.0, 0.0, 0.4)?)?;
    let b = extract_oriented_slice(&mosaic, &EgoPose::new(0.0, 0.0, 0.0, 0.4 + PI)?)?;
    let n = SLICE_PX as u32;
    let mut flip = 0i32;
    for (u, v, p) in a.pixels.enumerate_pixels() {
        let q = b.pixels.get_pixel(n - 1 - u, n - 1 - v);
        for ch in 0..3 {
            flip = flip.max((p[ch] as i32 - q[ch] as i32).abs());
        }
    }
    checks.push(Check::at_most("yaw + pi vs flipped slice max error (LSB)", flip as f64, 1.0));

    // linear ramps are reproduced exactly by bilinear sampling
    let ramp_value = |px: f64, py: f64| 0.12 * px + 0.06 * py;
    let ramp = test_mosaic(|px, py| {
        let v = ramp_value(px as f64, py as f64).round() as u8;
        [v, v, 255 - v]
    })?;
    let pose = EgoPose::new(0.0, 0.0, 0.0, rng.random_range(-PI..PI))?;
    let g = SliceGeometry::new(&pose)?;
    let slice = extract_oriented_slice(&ramp, &pose)?;
    let mut ramp_err = 0.0f64;
    for (u, v, p) in slice.pixels.enumerate_pixels() {
        let (x, y) = g.pixel_to_mercator(u as f64, v as f64);
        let (px, py) = ramp.mercator_to_pixel(x, y);
        ramp_err = ramp_err.max((p[0] as f64 - ramp_value(px, py)).abs());
    }
    checks.push(Check::at_most("ramp reproduction max error (LSB)", ramp_err, 1.0));

    let (w, h) = slice.pixels.dimensions();
    checks.push(
        Check::at_most("output size mismatch (px)", (w as f64 - 400.0).abs() + (h as f64 - 400.0).abs(), 0.0)
            .with_detail(format!("{w}x{h}")),
    );
    checks.push(
        Check::at_most("ground resolution error (m/px)", (slice.ground_resolution() - 0.2).abs(), 1e-15)
            .with_detail(format!("{} m over {w} px", slice.range())),
    );
    Ok(checks)
}

pub(super) fn toy_fit(seed: u64) -> Result<Vec<Check>> {
    let (street, mask) = synthetic_dyn_scene(32, 4, seed);
    let r = fit_dyn_head(&street, &mask, 200, 0.1, seed)?;
    Ok(vec![
        Check::below("dyn loss after 200 steps", r.final_loss, 0.1)
            .with_detail(format!("initial {:.4}", r.losses.first().copied().unwrap_or(f64::NAN))),
        Check::above("thresholded map IoU", r.iou, 0.9),
    ])
}
