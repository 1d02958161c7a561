use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::{GrayImage, ImageBuffer, Luma};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use satocc::fusion::{
    ddf_fuse, dsa_refine, dual_feature_fuse, dyn_head, save_weights, soft_gate, synthetic_dyn_scene, train_dyn_head,
    u_fuse, FusionConfig, FusionWeights,
};
use satocc::geo::{self, GeoMosaic};
use satocc::losses::{aggregate, aggregate_defined, IouCounts, MetricReport};
use satocc::occ::{self, classes, BevMap, Mask3, OccGrid};
use satocc::tensor::Tensor;
use satocc::verify::{run_suite, SuiteReport, VerifyOptions, SUITES};
use satocc::view::{uni_sa_gather, uni_sa_splat, CameraRig, Frustum, LssGeometry, SamplePoints};
use serde::Serialize;
use serde_json::json;

use crate::config::RunConfig;
use crate::CliError;

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    p.as_deref().ok_or_else(|| CliError::new("missing-argument", format!("--{flag} is required (flag or config paths.{flag})")))
}

fn in_file(path: &Path) -> impl Fn(satocc::Error) -> CliError + '_ {
    move |e| CliError::new(e.kind(), format!("{}: {e}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text + "\n").map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::new("io", format!("{}: {e}", dir.display())))
}

fn save_png<P>(img: &ImageBuffer<P, Vec<P::Subpixel>>, path: &Path) -> Result<(), CliError>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
{
    img.save(path).map_err(|e| CliError::new("image", format!("{}: {e}", path.display())))
}

pub fn curate(cfg: &RunConfig) -> Result<u8, CliError> {
    let mosaic_dir = need(&cfg.paths.mosaic, "mosaic")?;
    if !mosaic_dir.join("mosaic.json").is_file() {
        return Err(CliError::new("mosaic-not-found", format!("no mosaic.json in {}", mosaic_dir.display())));
    }
    let poses_path = need(&cfg.paths.poses, "poses")?;
    if !poses_path.is_file() {
        return Err(CliError::new("poses-not-found", format!("{} does not exist", poses_path.display())));
    }
    let out = need(&cfg.paths.out, "out")?;
    let mosaic = GeoMosaic::load(mosaic_dir)?;
    let poses = geo::read_poses(poses_path)?;
    let manifest = geo::curate(&poses, &mosaic, out)?;
    let summary = json!({
        "ok": manifest.ok_count(),
        "failed": manifest.failure_count(),
        "manifest": out.join("manifest.json"),
    });
    println!("{summary}");
    Ok(if manifest.failure_count() == 0 { 0 } else { 1 })
}

/// Sorted tokens of `<token>.occ` files in `dir`.
fn occ_tokens(dir: &Path) -> Result<BTreeSet<String>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::new("io", format!("{}: {e}", dir.display())))?;
    let mut out = BTreeSet::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::new("io", format!("{}: {e}", dir.display())))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(token) = name.strip_suffix(".occ") {
            out.insert(token.to_string());
        }
    }
    Ok(out)
}

fn load_grid(cfg: &RunConfig, path: &Path) -> Result<OccGrid, CliError> {
    let raw = occ::read_occ(path).map_err(in_file(path))?;
    if raw.dims() != cfg.grid.dims {
        return Err(CliError::new(
            "dimension",
            format!("{}: grid is {:?}, config expects {:?}", path.display(), raw.dims(), cfg.grid.dims),
        ));
    }
    OccGrid::with_geometry(raw.dims(), cfg.grid.voxel_size, cfg.grid.origin(), raw.classes().to_vec())
        .map_err(in_file(path))
}

#[derive(Debug, Serialize)]
struct LabelStats {
    token: String,
    dims: [usize; 3],
    /// Voxels per class id `0..=17`.
    class_counts: [u64; 18],
    static_voxels: u64,
    dynamic_voxels: u64,
    free_voxels: u64,
    boxes: usize,
    static_columns: usize,
    dynamic_cells: usize,
}

/// Image with `x` along columns and `y` along rows.
fn bev_image<T: Clone, P: image::Pixel>(m: &BevMap<T>, f: impl Fn(&T) -> P) -> ImageBuffer<P, Vec<P::Subpixel>> {
    ImageBuffer::from_fn(m.nx as u32, m.ny as u32, |x, y| f(m.get(x as usize, y as usize)))
}

pub fn genlabels(cfg: &RunConfig) -> Result<u8, CliError> {
    let dir = need(&cfg.paths.occ, "occ")?;
    let out = need(&cfg.paths.out, "out")?;
    create_dir(out)?;
    let tokens = occ_tokens(dir)?;
    for token in &tokens {
        let grid = load_grid(cfg, &dir.join(format!("{token}.occ")))?;
        let box_path = dir.join(format!("{token}.boxes.jsonl"));
        let boxes = if box_path.is_file() { occ::read_boxes(&box_path).map_err(in_file(&box_path))? } else { Vec::new() };

        let heights = occ::height_map(&grid);
        let semantic = occ::semantic_map(&grid, &heights)?;
        let dynamic = occ::dynamic_bev_mask(&grid, &boxes);

        // height ids are the top static voxel index plus one, zero when none
        let h: ImageBuffer<Luma<u16>, _> = bev_image(&heights, |k| Luma([k.map_or(0, |k| k + 1)]));
        let s: GrayImage = bev_image(&semantic, |&c| Luma([c]));
        let d: GrayImage = bev_image(&dynamic, |&b| Luma([b as u8]));
        save_png(&h, &out.join(format!("{token}.height.png")))?;
        save_png(&s, &out.join(format!("{token}.semantic.png")))?;
        save_png(&d, &out.join(format!("{token}.dynamic.png")))?;

        let counts = grid.class_counts();
        let stats = LabelStats {
            token: token.clone(),
            dims: grid.dims(),
            class_counts: counts,
            static_voxels: classes::STATIC.map(|c| counts[c as usize]).sum(),
            dynamic_voxels: classes::DYNAMIC.map(|c| counts[c as usize]).sum(),
            free_voxels: counts[classes::FREE as usize],
            boxes: boxes.len(),
            static_columns: heights.data.iter().flatten().count(),
            dynamic_cells: dynamic.count(),
        };
        write_json(&out.join(format!("{token}.stats.json")), &stats)?;
    }
    println!("{}", json!({ "samples": tokens.len(), "out": out }));
    Ok(0)
}

#[derive(Debug, Serialize)]
struct SampleReport {
    token: String,
    report: MetricReport,
}

#[derive(Debug, Serialize)]
struct EvalReport {
    /// Counts pooled over every sample before dividing.
    pooled: MetricReport,
    samples: Vec<SampleReport>,
}

fn load_mask(path: &Path, dims: [usize; 3]) -> Result<Mask3, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
    let n: usize = dims.iter().product();
    if bytes.len() != n {
        return Err(CliError::new(
            "format",
            format!("{}: observe mask has {} bytes, grid has {n} voxels", path.display(), bytes.len()),
        ));
    }
    Ok(Mask3 { dims, data: bytes.iter().map(|&b| b != 0).collect() })
}

pub fn eval(cfg: &RunConfig) -> Result<u8, CliError> {
    let pred_dir = need(&cfg.paths.pred, "pred")?;
    let gt_dir = need(&cfg.paths.gt, "gt")?;
    let (pred, gt) = (occ_tokens(pred_dir)?, occ_tokens(gt_dir)?);
    let no_pred: Vec<_> = gt.difference(&pred).collect();
    let no_gt: Vec<_> = pred.difference(&gt).collect();
    if !no_pred.is_empty() || !no_gt.is_empty() {
        return Err(CliError::new(
            "sample-mismatch",
            format!("missing predictions: {no_pred:?}; missing ground truth: {no_gt:?}"),
        ));
    }
    if gt.is_empty() {
        return Err(CliError::new("sample-mismatch", format!("no .occ samples in {}", gt_dir.display())));
    }
    let mut pooled = IouCounts::default();
    let mut samples = Vec::new();
    for token in &gt {
        let p = load_grid(cfg, &pred_dir.join(format!("{token}.occ")))?;
        let g = load_grid(cfg, &gt_dir.join(format!("{token}.occ")))?;
        let mask = if cfg.observe_mask { Some(load_mask(&gt_dir.join(format!("{token}.mask")), g.dims())?) } else { None };
        let mut counts = IouCounts::default();
        counts.add(&p, &g, mask.as_ref())?;
        pooled.merge(&counts);
        samples.push(SampleReport { token: token.clone(), report: aggregate_defined(&counts.iou())? });
    }
    let report = EvalReport { pooled: aggregate_defined(&pooled.iou())?, samples };
    eprintln!("{}", summary_line(&report.pooled));
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    if let Some(out) = &cfg.paths.out {
        write_json(out, &report)?;
    }
    Ok(0)
}

fn summary_line(r: &MetricReport) -> String {
    let f = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.2}"));
    format!("mIoU {}  D-mIoU {}  S-mIoU {}", f(r.miou), f(r.d_miou), f(r.s_miou))
}

pub fn eval_per_class(values: &str) -> Result<u8, CliError> {
    let parsed = values
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::new("format", format!("--from-per-class: {e}")))?;
    let report = aggregate(&parsed)?;
    eprintln!("{}", summary_line(&report));
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(0)
}

#[derive(Debug, Serialize)]
struct VerifyReport<'a> {
    seed: u64,
    perturb_geometry: bool,
    passed: bool,
    suites: &'a [SuiteReport],
}

pub fn verify(cfg: &RunConfig, perturb_geometry: bool, only: &[String]) -> Result<u8, CliError> {
    let opts = VerifyOptions { seed: cfg.seed, perturb_geometry };
    let names: Vec<&str> = if only.is_empty() { SUITES.to_vec() } else { only.iter().map(String::as_str).collect() };
    let mut reports = Vec::new();
    for name in names {
        let r = run_suite(name, &opts)?;
        println!("{} {} ({} checks, {:.2?})", if r.passed() { "PASS" } else { "FAIL" }, r.suite, r.checks.len(), r.elapsed);
        for c in &r.checks {
            println!("  {} {}: {:.3e} vs {:.3e} {}", if c.passed { "ok" } else { "x " }, c.name, c.measured, c.threshold, c.detail);
        }
        reports.push(r);
    }
    let passed = reports.iter().all(SuiteReport::passed);
    if let Some(out) = &cfg.paths.out {
        write_json(out, &VerifyReport { seed: cfg.seed, perturb_geometry, passed, suites: &reports })?;
    }
    Ok(if passed { 0 } else { 1 })
}

fn time_ms(iters: usize, mut f: impl FnMut() -> Result<(), CliError>) -> Result<f64, CliError> {
    let start = Instant::now();
    for _ in 0..iters {
        f()?;
    }
    Ok(start.elapsed().as_secs_f64() * 1e3 / iters as f64)
}

pub fn bench(cfg: &RunConfig, iters: usize) -> Result<u8, CliError> {
    let iters = iters.max(1);
    let rig = match &cfg.paths.rig {
        Some(p) => CameraRig::load(p).map_err(in_file(p))?,
        None => CameraRig::synthetic_surround(),
    };
    let spec = cfg.grid.bev_spec();
    let (lo, hi) = SamplePoints::DEFAULT_Z_RANGE;
    let points = SamplePoints::grid(&spec, lo, hi, cfg.z_levels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c = 8;
    let bins = Frustum::default_bins();
    let frusta: Vec<Frustum> = rig
        .cameras()
        .iter()
        .map(|cam| {
            let (h, w) = cam.image_size();
            Frustum::random(&bins, c, h, w, &mut rng)
        })
        .collect();
    let features: Vec<Tensor> = frusta.iter().map(|f| f.context.clone()).collect();
    let bev = Tensor::randn(&[c, spec.nx, spec.ny], 1.0, &mut rng);
    let geoms: Vec<LssGeometry> = rig.cameras().iter().map(|cam| LssGeometry::new(cam, &bins, &spec)).collect();

    let uni_gather = time_ms(iters, || Ok(uni_sa_gather(&features, &rig, &points).map(drop)?))?;
    let uni_splat = time_ms(iters, || Ok(uni_sa_splat(&bev, &rig, &points).map(drop)?))?;
    let lss_splat = time_ms(iters, || {
        for (g, f) in geoms.iter().zip(&frusta) {
            g.splat(f)?;
        }
        Ok(())
    })?;
    let lss_gather = time_ms(iters, || {
        for (g, f) in geoms.iter().zip(&frusta) {
            g.gather(&bev, &f.depth)?;
        }
        Ok(())
    })?;
    let report = json!({
        "cameras": rig.len(),
        "bev": [spec.nx, spec.ny],
        "iters": iters,
        "uni_sa": { "gather_ms": uni_gather, "splat_ms": uni_splat, "splat_over_gather": uni_splat / uni_gather },
        "lss": { "splat_ms": lss_splat, "gather_ms": lss_gather, "gather_over_splat": lss_gather / lss_splat },
    });
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(0)
}

fn unit_png(t: &Tensor, n: usize) -> GrayImage {
    ImageBuffer::from_fn(n as u32, n as u32, |x, y| {
        Luma([(t.data()[x as usize * n + y as usize].clamp(0.0, 1.0) * 255.0).round() as u8])
    })
}

pub fn demo_fuse(cfg: &RunConfig, size: usize, steps: usize) -> Result<u8, CliError> {
    if size < 8 || !size.is_multiple_of(4) {
        return Err(CliError::new("domain", format!("--size {size} must be a multiple of 4 and at least 8")));
    }
    let out = need(&cfg.paths.out, "out")?;
    create_dir(out)?;
    let n = size;
    let fc = FusionConfig { image_channels: 3, gate_channels: 4, bev_channels: 8, lss_channels: 4 };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = FusionWeights::random(&fc, &mut rng);

    // street branch: both view transforms merged, then the dynamic head fit to the scene
    let (unisa, mask) = synthetic_dyn_scene(n, fc.bev_channels, cfg.seed);
    let lss = Tensor::randn(&[fc.lss_channels, n, n], 0.5, &mut rng);
    let street = dual_feature_fuse(&lss, &unisa, &w)?;
    let (trained, fit) = train_dyn_head(&street, &mask, steps, 0.1, cfg.seed)?;
    w.dyn_k = trained.dyn_k;
    w.dyn_b = trained.dyn_b;
    let att = dyn_head(&street, &w)?;

    // satellite branch: gated image features fused with two coarser stages
    let image = Tensor::uniform(&[fc.image_channels, 2 * n, 2 * n], 0.0, 1.0, &mut rng);
    let half = soft_gate(&image, &w)?;
    let quarter = Tensor::randn(&[2, n / 2, n / 2], 1.0, &mut rng);
    let context = Tensor::randn(&[2, n / 4, n / 4], 1.0, &mut rng);
    let sat = u_fuse(&half, &quarter, &context)?;

    let fused = ddf_fuse(&sat, &street, &att, &w)?;
    let refined = dsa_refine(&fused, &att, &w)?;

    let map_path = out.join("dyn_map.png");
    save_png(&unit_png(&att.map, n), &map_path)?;
    let target = Tensor::from_fn(&[1, n, n], |i| if mask.data[i] { 1.0 } else { 0.0 });
    save_png(&unit_png(&target, n), &out.join("dyn_target.png"))?;
    let weights_path = out.join("weights.sawt");
    save_weights(&weights_path, &w).map_err(in_file(&weights_path))?;

    let summary = json!({
        "seed": cfg.seed,
        "bev": [n, n],
        "satellite_features": sat.shape(),
        "street_features": street.shape(),
        "fused": fused.shape(),
        "refined": refined.shape(),
        "fit": { "steps": steps, "initial_loss": fit.losses.first(), "final_loss": fit.final_loss, "iou": fit.iou },
        "dynamic_cells": mask.count(),
        "dyn_map": map_path,
    });
    write_json(&out.join("summary.json"), &summary)?;
    println!("{summary}");
    Ok(0)
}
