use image::RgbImage;

use super::{local_scale, EgoPose, GeoMosaic};
use crate::error::{Error, Result};

/// Slice width and height in pixels.
pub const SLICE_PX: usize = 400;
/// Ground extent covered by a slice, meters per side.
pub const SLICE_RANGE_M: f64 = 80.0;
/// Meters of ground per slice pixel.
pub const GROUND_RESOLUTION_M: f64 = SLICE_RANGE_M / SLICE_PX as f64;
/// Pixel coordinate of the ego position along both axes.
pub const SLICE_CENTER: f64 = (SLICE_PX as f64 - 1.0) / 2.0;

/// Maps between slice pixels, local ground offsets and mercator meters for
/// one ego pose. Image "up" is the vehicle heading.
#[derive(Debug, Clone, Copy)]
pub struct SliceGeometry {
    ego_x: f64,
    ego_y: f64,
    scale: f64,
    forward: [f64; 2],
    right: [f64; 2],
}

impl SliceGeometry {
    pub fn new(pose: &EgoPose) -> Result<Self> {
        let (ego_x, ego_y) = pose.mercator()?;
        let (s, c) = pose.yaw.sin_cos();
        Ok(Self {
            ego_x,
            ego_y,
            scale: local_scale(pose.lat)?,
            forward: [c, s],
            right: [s, -c],
        })
    }

    /// Mercator meters per ground meter at the ego latitude.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn ego_mercator(&self) -> (f64, f64) {
        (self.ego_x, self.ego_y)
    }

    /// East/north ground offset (meters) of slice pixel `(u, v)` from the ego.
    pub fn pixel_to_ground(&self, u: f64, v: f64) -> [f64; 2] {
        let a = (u - SLICE_CENTER) * GROUND_RESOLUTION_M;
        let b = (SLICE_CENTER - v) * GROUND_RESOLUTION_M;
        [
            a * self.right[0] + b * self.forward[0],
            a * self.right[1] + b * self.forward[1],
        ]
    }

    pub fn ground_to_pixel(&self, g: [f64; 2]) -> (f64, f64) {
        let a = g[0] * self.right[0] + g[1] * self.right[1];
        let b = g[0] * self.forward[0] + g[1] * self.forward[1];
        (SLICE_CENTER + a / GROUND_RESOLUTION_M, SLICE_CENTER - b / GROUND_RESOLUTION_M)
    }

    pub fn pixel_to_mercator(&self, u: f64, v: f64) -> (f64, f64) {
        let [e, n] = self.pixel_to_ground(u, v);
        (self.ego_x + self.scale * e, self.ego_y + self.scale * n)
    }

    pub fn mercator_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        self.ground_to_pixel([(x - self.ego_x) / self.scale, (y - self.ego_y) / self.scale])
    }

    /// Mercator corners of the full 80 m square: top-left, top-right,
    /// bottom-right, bottom-left in image terms.
    pub fn footprint_mercator(&self) -> [[f64; 2]; 4] {
        let lo = -0.5;
        let hi = SLICE_PX as f64 - 0.5;
        [(lo, lo), (hi, lo), (hi, hi), (lo, hi)].map(|(u, v)| {
            let (x, y) = self.pixel_to_mercator(u, v);
            [x, y]
        })
    }

    /// Axis-aligned mercator box that contains the footprint at any yaw.
    pub fn inflated_bounds(&self) -> (f64, f64, f64, f64) {
        let r = std::f64::consts::SQRT_2 * SLICE_RANGE_M / 2.0 * self.scale;
        (self.ego_x - r, self.ego_y - r, self.ego_x + r, self.ego_y + r)
    }
}

/// A heading-aligned 400x400 RGB crop centered on the ego vehicle.
#[derive(Debug, Clone)]
pub struct SatSlice {
    pub pixels: RgbImage,
    pub pose: EgoPose,
}

impl SatSlice {
    pub fn ground_resolution(&self) -> f64 {
        GROUND_RESOLUTION_M
    }

    pub fn range(&self) -> f64 {
        SLICE_RANGE_M
    }
}

fn check_coverage(mosaic: &GeoMosaic, geom: &SliceGeometry) -> Result<()> {
    let (min_x, min_y, max_x, max_y) = geom.inflated_bounds();
    let (bx0, by0, bx1, by1) = mosaic.mercator_bounds();
    let overruns = [
        ("west", bx0 - min_x),
        ("south", by0 - min_y),
        ("east", max_x - bx1),
        ("north", max_y - by1),
    ];
    let missing: Vec<String> = overruns
        .iter()
        .filter(|(_, d)| *d > 0.0)
        .map(|(side, d)| format!("{side} {d:.3} m"))
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Coverage { missing: missing.join(", ") })
    }
}

/// Crops the heading-up slice for `pose` out of `mosaic`.
///
/// Each output pixel bilinearly samples the mosaic at the mercator position
/// of its ground point; ground offsets are scaled by `1 / cos(lat)` so the
/// slice spans 80 true ground meters.
pub fn extract_oriented_slice(mosaic: &GeoMosaic, pose: &EgoPose) -> Result<SatSlice> {
    let geom = SliceGeometry::new(pose)?;
    check_coverage(mosaic, &geom)?;
    let mut pixels = RgbImage::new(SLICE_PX as u32, SLICE_PX as u32);
    for v in 0..SLICE_PX {
        for u in 0..SLICE_PX {
            let (x, y) = geom.pixel_to_mercator(u as f64, v as f64);
            let (px, py) = mosaic.mercator_to_pixel(x, y);
            let rgb = mosaic.sample_bilinear(px, py)?.ok_or_else(|| Error::Coverage {
                missing: format!("slice pixel ({u}, {v}) maps off-mosaic to ({px:.3}, {py:.3})"),
            })?;
            pixels.put_pixel(
                u as u32,
                v as u32,
                image::Rgb(rgb.map(|c| c.round().clamp(0.0, 255.0) as u8)),
            );
        }
    }
    Ok(SatSlice { pixels, pose: *pose })
}
