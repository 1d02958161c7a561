use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{project_points, Camera, CameraRig, SamplePoints};
use crate::error::{Error, Result};
use crate::occ::{BevMap, BevSpec};
use crate::tensor::ops::{bilinear_scatter, bilinear_taps, softmax};
use crate::tensor::{Tape, Tensor, Var};

fn check_features(features: &[Tensor], rig: &CameraRig) -> Result<usize> {
    if features.len() != rig.len() {
        return Err(Error::dim("uni_sa_gather", "feature maps vs cameras", &[features.len()], &[rig.len()]));
    }
    let channels = features[0].dims3("uni_sa_gather")?.0;
    for (f, cam) in features.iter().zip(rig.cameras()) {
        let (c, h, w) = f.dims3("uni_sa_gather")?;
        let (ch, cw) = cam.image_size();
        if (c, h, w) != (channels, ch, cw) {
            return Err(Error::dim("uni_sa_gather", "feature (C,H,W) vs camera", &[c, h, w], &[channels, ch, cw]));
        }
    }
    Ok(channels)
}

/// Backward projection: every BEV cell sums, over cameras and its z-levels,
/// the bilinear feature samples at the projections of its preset points.
pub fn uni_sa_gather(features: &[Tensor], rig: &CameraRig, points: &SamplePoints) -> Result<Tensor> {
    let c = check_features(features, rig)?;
    let cells = points.nx * points.ny;
    let per_cam: Vec<Vec<f64>> = rig
        .cameras()
        .par_iter()
        .zip(features)
        .map(|(cam, feat)| {
            let (_, h, w) = feat.dims3("uni_sa_gather").expect("checked");
            let proj = project_points(&points.points, cam);
            let data = feat.data();
            let mut out = vec![0.0; c * cells];
            for (p, uv) in proj.uv.iter().enumerate() {
                if !proj.valid[p] {
                    continue;
                }
                let Some((idx, wt)) = bilinear_taps(h, w, uv[0], uv[1]) else {
                    continue;
                };
                let cell = p / points.nz;
                for ch in 0..c {
                    let plane = &data[ch * h * w..];
                    out[ch * cells + cell] += wt[0] * plane[idx[0]] + wt[1] * plane[idx[1]] + wt[2] * plane[idx[2]] + wt[3] * plane[idx[3]];
                }
            }
            out
        })
        .collect();
    let mut total = vec![0.0; c * cells];
    for cam_out in per_cam {
        for (t, v) in total.iter_mut().zip(cam_out) {
            *t += v;
        }
    }
    Tensor::new(vec![c, points.nx, points.ny], total)
}

/// [`uni_sa_gather`] recorded on a tape, differentiable in the feature maps.
pub fn uni_sa_gather_tape(tape: &mut Tape, features: &[Var], rig: &CameraRig, points: &SamplePoints) -> Result<Var> {
    let values: Vec<Tensor> = features.iter().map(|&v| tape.value(v).clone()).collect();
    let c = check_features(&values, rig)?;
    let mut acc: Option<Var> = None;
    for (&f, cam) in features.iter().zip(rig.cameras()) {
        let xy: Arc<[[f64; 2]]> = project_points(&points.points, cam).sample_coords().into();
        let s = tape.bilinear_sample(f, xy)?;
        acc = Some(match acc {
            None => s,
            Some(a) => tape.add(a, s)?,
        });
    }
    let pooled = tape.pool_groups(acc.expect("rig is non-empty"), points.nz)?;
    tape.reshape(pooled, &[c, points.nx, points.ny])
}

/// Adjoint of [`uni_sa_gather`]: scatters each BEV cell's value back onto
/// every camera's feature lattice through the same bilinear weights.
pub fn uni_sa_splat(bev: &Tensor, rig: &CameraRig, points: &SamplePoints) -> Result<Vec<Tensor>> {
    let (c, nx, ny) = bev.dims3("uni_sa_splat")?;
    if (nx, ny) != (points.nx, points.ny) {
        return Err(Error::dim("uni_sa_splat", "BEV (X,Y) vs sample grid", &[nx, ny], &[points.nx, points.ny]));
    }
    let n = points.len();
    let b = bev.data();
    let values = Tensor::from_fn(&[c, n], |i| b[(i / n) * nx * ny + (i % n) / points.nz]);
    rig.cameras()
        .par_iter()
        .map(|cam| {
            let (h, w) = cam.image_size();
            let xy = project_points(&points.points, cam).sample_coords();
            bilinear_scatter(&values, &xy, (c, h, w))
        })
        .collect()
}

/// Cells with at least one preset point visible to some camera.
pub fn in_frustum_mask(rig: &CameraRig, points: &SamplePoints) -> BevMap<bool> {
    let mut out = BevMap::filled(points.nx, points.ny, false);
    for cam in rig.cameras() {
        let proj = project_points(&points.points, cam);
        for (p, &ok) in proj.valid.iter().enumerate() {
            if ok {
                out.data[p / points.nz] = true;
            }
        }
    }
    out
}

/// Per-pixel depth distributions and context features of one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Frustum {
    pub depth_bins: Vec<f64>,
    /// `[D, H, W]`, a distribution over depth bins at each pixel.
    pub depth: Tensor,
    /// `[C, H, W]`.
    pub context: Tensor,
}

impl Frustum {
    pub fn new(depth_bins: Vec<f64>, depth: Tensor, context: Tensor) -> Result<Self> {
        if depth_bins.is_empty() || depth_bins[0] <= 0.0 || depth_bins.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("depth bins must be positive and strictly increasing".into()));
        }
        let (d, h, w) = depth.dims3("Frustum")?;
        let (_, ch, cw) = context.dims3("Frustum")?;
        if d != depth_bins.len() {
            return Err(Error::dim("Frustum", "depth distribution D vs bins", &[d], &[depth_bins.len()]));
        }
        if (h, w) != (ch, cw) {
            return Err(Error::dim("Frustum", "context (H,W) vs depth (H,W)", &[ch, cw], &[h, w]));
        }
        let p = depth.data();
        for px in 0..h * w {
            let mut total = 0.0;
            for k in 0..d {
                let v = p[k * h * w + px];
                if !(v >= 0.0) {
                    return Err(Error::Domain(format!("negative depth probability {v}")));
                }
                total += v;
            }
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Domain(format!("depth distribution at pixel {px} sums to {total}")));
            }
        }
        Ok(Self { depth_bins, depth, context })
    }

    /// 1 m to 45 m in 0.5 m steps.
    pub fn default_bins() -> Vec<f64> {
        (0..89).map(|i| 1.0 + 0.5 * i as f64).collect()
    }

    /// Frustum whose depth distribution is a softmax over random logits.
    pub fn random(bins: &[f64], channels: usize, height: usize, width: usize, rng: &mut impl rand::Rng) -> Self {
        let logits = Tensor::randn(&[bins.len(), height, width], 1.0, rng);
        let depth = softmax(&logits, 0).expect("rank-3 input");
        let context = Tensor::randn(&[channels, height, width], 1.0, rng);
        Self { depth_bins: bins.to_vec(), depth, context }
    }
}

/// The BEV cell hit by every `(depth bin, pixel)` of one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct LssGeometry {
    cells: Vec<Option<usize>>,
    bins: usize,
    height: usize,
    width: usize,
    nx: usize,
    ny: usize,
}

impl LssGeometry {
    pub fn new(cam: &Camera, depth_bins: &[f64], spec: &BevSpec) -> Self {
        let (height, width) = cam.image_size();
        let mut cells = Vec::with_capacity(depth_bins.len() * height * width);
        for &d in depth_bins {
            for v in 0..height {
                for u in 0..width {
                    let [x, y, _] = cam.lift(u as f64, v as f64, d);
                    cells.push(spec.cell_of(x, y).map(|(i, j)| i * spec.ny + j));
                }
            }
        }
        Self { cells, bins: depth_bins.len(), height, width, nx: spec.nx, ny: spec.ny }
    }

    fn check(&self, frustum: &Frustum) -> Result<usize> {
        let (d, h, w) = frustum.depth.dims3("lss_splat")?;
        if (d, h, w) != (self.bins, self.height, self.width) {
            return Err(Error::dim("lss_splat", "frustum (D,H,W) vs geometry", &[d, h, w], &[self.bins, self.height, self.width]));
        }
        Ok(frustum.context.dims3("lss_splat")?.0)
    }

    /// Forward splat: each lifted point adds `depth prob x context` to its cell.
    pub fn splat(&self, frustum: &Frustum) -> Result<Tensor> {
        let c = self.check(frustum)?;
        let plane = self.height * self.width;
        let cells = self.nx * self.ny;
        let (p, ctx) = (frustum.depth.data(), frustum.context.data());
        let mut out = vec![0.0; c * cells];
        for (i, cell) in self.cells.iter().enumerate() {
            let Some(cell) = *cell else { continue };
            let px = i % plane;
            for ch in 0..c {
                out[ch * cells + cell] += p[i] * ctx[ch * plane + px];
            }
        }
        Tensor::new(vec![c, self.nx, self.ny], out)
    }

    /// Adjoint of [`Self::splat`] in the context features, with the depth
    /// distribution held fixed: each pixel gathers the BEV values of its
    /// lifted points weighted by their depth probabilities.
    pub fn gather(&self, bev: &Tensor, depth: &Tensor) -> Result<Tensor> {
        let (c, nx, ny) = bev.dims3("lss_gather")?;
        if (nx, ny) != (self.nx, self.ny) {
            return Err(Error::dim("lss_gather", "BEV (X,Y) vs geometry", &[nx, ny], &[self.nx, self.ny]));
        }
        let (d, h, w) = depth.dims3("lss_gather")?;
        if (d, h, w) != (self.bins, self.height, self.width) {
            return Err(Error::dim("lss_gather", "depth (D,H,W) vs geometry", &[d, h, w], &[self.bins, self.height, self.width]));
        }
        let plane = h * w;
        let cells = nx * ny;
        let (b, p) = (bev.data(), depth.data());
        let mut out = vec![0.0; c * plane];
        for ch in 0..c {
            for px in 0..plane {
                let mut acc = 0.0;
                for k in 0..d {
                    if let Some(cell) = self.cells[k * plane + px] {
                        acc += p[k * plane + px] * b[ch * cells + cell];
                    }
                }
                out[ch * plane + px] = acc;
            }
        }
        Tensor::new(vec![c, h, w], out)
    }

    /// Gradients of `<splat(frustum), grad_bev>` with respect to the depth
    /// distribution and the context.
    pub fn vjp(&self, frustum: &Frustum, grad_bev: &Tensor) -> Result<(Tensor, Tensor)> {
        let c = self.check(frustum)?;
        let cells = self.nx * self.ny;
        if grad_bev.shape() != [c, self.nx, self.ny] {
            return Err(Error::dim("lss_splat_vjp", "grad (C,X,Y)", grad_bev.shape(), &[c, self.nx, self.ny]));
        }
        let plane = self.height * self.width;
        let (g, ctx) = (grad_bev.data(), frustum.context.data());
        let grad_depth = Tensor::from_fn(&[self.bins, self.height, self.width], |i| match self.cells[i] {
            Some(cell) => (0..c).map(|ch| ctx[ch * plane + i % plane] * g[ch * cells + cell]).sum(),
            None => 0.0,
        });
        let grad_ctx = self.gather(grad_bev, &frustum.depth)?;
        Ok((grad_depth, grad_ctx))
    }
}

/// Forward splat of one camera's frustum into the BEV grid.
pub fn lss_splat(frustum: &Frustum, cam: &Camera, spec: &BevSpec) -> Result<Tensor> {
    LssGeometry::new(cam, &frustum.depth_bins, spec).splat(frustum)
}

/// Sum of per-camera splats.
pub fn lss_splat_rig(frusta: &[Frustum], rig: &CameraRig, spec: &BevSpec) -> Result<Tensor> {
    if frusta.len() != rig.len() {
        return Err(Error::dim("lss_splat", "frusta vs cameras", &[frusta.len()], &[rig.len()]));
    }
    let parts: Vec<Tensor> = rig
        .cameras()
        .par_iter()
        .zip(frusta)
        .map(|(cam, f)| lss_splat(f, cam, spec))
        .collect::<Result<_>>()?;
    let mut total = parts[0].clone();
    for p in &parts[1..] {
        total = total.add(p)?;
    }
    Ok(total)
}

/// BEV-to-image adjoint of [`lss_splat`] in the context features.
pub fn lss_gather(bev: &Tensor, depth: &Tensor, depth_bins: &[f64], cam: &Camera, spec: &BevSpec) -> Result<Tensor> {
    LssGeometry::new(cam, depth_bins, spec).gather(bev, depth)
}

pub fn lss_splat_vjp(frustum: &Frustum, cam: &Camera, spec: &BevSpec, grad_bev: &Tensor) -> Result<(Tensor, Tensor)> {
    LssGeometry::new(cam, &frustum.depth_bins, spec).vjp(frustum, grad_bev)
}

/// Fraction of cells whose center lies at radius `[r_min, r_max)` from the
/// ego that hold a nonzero value in any channel.
pub fn bev_coverage(bev: &Tensor, spec: &BevSpec, band: (f64, f64)) -> Result<f64> {
    let (c, nx, ny) = bev.dims3("bev_coverage")?;
    if (nx, ny) != (spec.nx, spec.ny) {
        return Err(Error::dim("bev_coverage", "BEV (X,Y) vs spec", &[nx, ny], &[spec.nx, spec.ny]));
    }
    let (r0, r1) = band;
    if !(r0 >= 0.0 && r1 > r0) {
        return Err(Error::Domain(format!("invalid radial band [{r0}, {r1})")));
    }
    let data = bev.data();
    let (mut total, mut hit) = (0usize, 0usize);
    for i in 0..nx {
        for j in 0..ny {
            let [x, y] = spec.cell_center(i, j);
            let r = x.hypot(y);
            if r < r0 || r >= r1 {
                continue;
            }
            total += 1;
            if (0..c).any(|ch| data[ch * nx * ny + i * ny + j] != 0.0) {
                hit += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::Domain(format!("radial band [{r0}, {r1}) contains no cells")));
    }
    Ok(hit as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointOptions {
    pub trials: usize,
    pub channels: usize,
    pub depth_bins: Vec<f64>,
    pub seed: u64,
    /// Run the adjoint directions on a shifted copy of the rig.
    pub perturb_geometry: bool,
}

impl Default for AdjointOptions {
    fn default() -> Self {
        Self { trials: 20, channels: 3, depth_bins: Frustum::default_bins(), seed: 0, perturb_geometry: false }
    }
}

/// Largest inner-product gap `|<A x, y> - <x, A^T y>|` seen for each
/// transform pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdjointReport {
    pub uni_sa: f64,
    pub lss: f64,
    pub trials: usize,
}

impl AdjointReport {
    pub fn max_error(&self) -> f64 {
        self.uni_sa.max(self.lss)
    }
}

pub fn adjointness_check(rig: &CameraRig, points: &SamplePoints, spec: &BevSpec, opts: &AdjointOptions) -> Result<AdjointReport> {
    if (points.nx, points.ny) != (spec.nx, spec.ny) {
        return Err(Error::dim("adjointness_check", "sample grid vs spec", &[points.nx, points.ny], &[spec.nx, spec.ny]));
    }
    let adj_rig = if opts.perturb_geometry {
        rig.translated([0.5 * spec.cell_x, 0.35 * spec.cell_y, 0.1])
    } else {
        rig.clone()
    };
    let fwd_geo: Vec<LssGeometry> = rig.cameras().iter().map(|c| LssGeometry::new(c, &opts.depth_bins, spec)).collect();
    let adj_geo: Vec<LssGeometry> = adj_rig.cameras().iter().map(|c| LssGeometry::new(c, &opts.depth_bins, spec)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let c = opts.channels;
    let mut report = AdjointReport { uni_sa: 0.0, lss: 0.0, trials: opts.trials };
    for _ in 0..opts.trials {
        let x: Vec<Tensor> = rig
            .cameras()
            .iter()
            .map(|cam| {
                let (h, w) = cam.image_size();
                Tensor::randn(&[c, h, w], 1.0, &mut rng)
            })
            .collect();
        let y = Tensor::randn(&[c, spec.nx, spec.ny], 1.0, &mut rng);

        let lhs = uni_sa_gather(&x, rig, points)?.dot(&y)?;
        let back = uni_sa_splat(&y, &adj_rig, points)?;
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a.dot(b)).sum::<Result<f64>>()?;
        report.uni_sa = report.uni_sa.max((lhs - rhs).abs());

        let frusta: Vec<Frustum> = rig
            .cameras()
            .iter()
            .zip(x)
            .map(|(cam, ctx)| {
                let (h, w) = cam.image_size();
                let mut f = Frustum::random(&opts.depth_bins, 0, h, w, &mut rng);
                f.context = ctx;
                f
            })
            .collect();
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        for ((f, fg), ag) in frusta.iter().zip(&fwd_geo).zip(&adj_geo) {
            lhs += fg.splat(f)?.dot(&y)?;
            rhs += f.context.dot(&ag.gather(&y, &f.depth)?)?;
        }
        report.lss = report.lss.max((lhs - rhs).abs());
    }
    Ok(report)
}
