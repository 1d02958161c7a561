//! Street-view to BEV transforms: depth-based forward splatting and
//! preset-point backward projection, plus their adjoints and coverage
//! statistics.

mod camera;
mod transform;

pub use camera::{Camera, CameraRig, CameraSpec};
pub use transform::{
    adjointness_check, bev_coverage, in_frustum_mask, lss_gather, lss_splat, lss_splat_rig, lss_splat_vjp,
    uni_sa_gather, uni_sa_gather_tape, uni_sa_splat, AdjointOptions, AdjointReport, Frustum, LssGeometry,
};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::occ::BevSpec;

/// Preset 3-D sample points on a regular `nx x ny x nz` lattice, x-major,
/// then y, then z, so each run of `nz` points belongs to one BEV cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePoints {
    pub points: Vec<[f64; 3]>,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl SamplePoints {
    pub const DEFAULT_Z_LEVELS: usize = 4;
    pub const DEFAULT_Z_RANGE: (f64, f64) = (-1.0, 5.4);

    /// Points at every BEV cell center and at `levels` heights centered in
    /// equal slabs of `[z_min, z_max]`.
    pub fn grid(spec: &BevSpec, z_min: f64, z_max: f64, levels: usize) -> Result<Self> {
        if levels == 0 || !(z_max > z_min) {
            return Err(Error::Domain(format!("bad vertical layout: {levels} levels over [{z_min}, {z_max}]")));
        }
        let dz = (z_max - z_min) / levels as f64;
        let mut points = Vec::with_capacity(spec.cells() * levels);
        for i in 0..spec.nx {
            for j in 0..spec.ny {
                let [x, y] = spec.cell_center(i, j);
                for k in 0..levels {
                    points.push([x, y, z_min + (k as f64 + 0.5) * dz]);
                }
            }
        }
        Ok(Self { points, nx: spec.nx, ny: spec.ny, nz: levels })
    }

    pub fn default_for(spec: &BevSpec) -> Self {
        let (lo, hi) = Self::DEFAULT_Z_RANGE;
        Self::grid(spec, lo, hi, Self::DEFAULT_Z_LEVELS).expect("default layout is valid")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Pixel coordinates and camera depths of projected points.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// `(u, v)`; `(0, 0)` for invalid points.
    pub uv: Vec<[f64; 2]>,
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
}

impl Projection {
    /// Sampling coordinates with invalid points pushed out of the image so
    /// they sample as zero.
    pub fn sample_coords(&self) -> Vec<[f64; 2]> {
        self.uv
            .iter()
            .zip(&self.valid)
            .map(|(&uv, &ok)| if ok { uv } else { [f64::NAN; 2] })
            .collect()
    }
}

/// Perspective projection of ego-frame points into `cam`.
///
/// A point is valid when it lies in front of the camera and inside the
/// bilinear sampling domain of the feature map.
pub fn project_points(points: &[[f64; 3]], cam: &Camera) -> Projection {
    let (fx, fy, cx, cy) = (cam.fx(), cam.fy(), cam.cx(), cam.cy());
    let rows: Vec<([f64; 2], f64, bool)> = points
        .par_iter()
        .map(|&p| {
            let [x, y, z] = cam.ego_to_cam(p);
            if !(z > 0.0) {
                return ([0.0; 2], z, false);
            }
            let (u, v) = (fx * x / z + cx, fy * y / z + cy);
            if cam.in_image(u, v) {
                ([u, v], z, true)
            } else {
                ([0.0; 2], z, false)
            }
        })
        .collect();
    let mut out = Projection { uv: Vec::with_capacity(rows.len()), depth: Vec::with_capacity(rows.len()), valid: Vec::with_capacity(rows.len()) };
    for (uv, d, ok) in rows {
        out.uv.push(uv);
        out.depth.push(d);
        out.valid.push(ok);
    }
    out
}
