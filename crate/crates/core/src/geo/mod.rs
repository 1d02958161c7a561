//! Satellite slice curation from GPS/IMU ego poses.
//!
//! Positions are WGS84 degrees, projected through spherical Web Mercator
//! (EPSG:3857). Headings are yaw angles in the local east-north tangent
//! plane, counterclockwise from east.

mod curate;
mod mosaic;
mod slice;

pub use curate::{curate, read_poses, Manifest, ManifestEntry, PoseRecord, SliceSidecar};
pub use mosaic::{GeoMosaic, MosaicMeta};
pub use slice::{extract_oriented_slice, SatSlice, SliceGeometry, GROUND_RESOLUTION_M, SLICE_CENTER, SLICE_PX, SLICE_RANGE_M};

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// WGS84 semi-major axis used by EPSG:3857.
pub const EARTH_RADIUS_M: f64 = 6_378_137.0;

/// Latitude limit of the square Web Mercator world.
pub const MAX_LATITUDE_DEG: f64 = 85.05;

fn check_lat(lat: f64) -> Result<()> {
    if !lat.is_finite() || lat.abs() > MAX_LATITUDE_DEG {
        return Err(Error::Geodesy(format!(
            "latitude {lat} outside the Web Mercator range ±{MAX_LATITUDE_DEG}"
        )));
    }
    Ok(())
}

/// Forward spherical Web Mercator: degrees to meters.
pub fn wgs84_to_mercator(lat: f64, lon: f64) -> Result<(f64, f64)> {
    check_lat(lat)?;
    if !lon.is_finite() {
        return Err(Error::Geodesy(format!("longitude {lon} is not finite")));
    }
    let x = EARTH_RADIUS_M * lon.to_radians();
    // asinh(tan φ) == ln(tan(π/4 + φ/2)), exact at the equator
    let y = EARTH_RADIUS_M * lat.to_radians().tan().asinh();
    Ok((x, y))
}

/// Inverse of [`wgs84_to_mercator`], returning `(lat, lon)` in degrees.
pub fn mercator_to_wgs84(x: f64, y: f64) -> (f64, f64) {
    let lon = (x / EARTH_RADIUS_M).to_degrees();
    let lat = (2.0 * (y / EARTH_RADIUS_M).exp().atan() - FRAC_PI_2).to_degrees();
    (lat, lon)
}

/// Mercator meters per ground meter at `lat`.
pub fn local_scale(lat: f64) -> Result<f64> {
    check_lat(lat)?;
    Ok(1.0 / lat.to_radians().cos())
}

/// Wraps an angle into `(-π, π]`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let y = (yaw + PI).rem_euclid(TAU) - PI;
    if y <= -PI {
        y + TAU
    } else {
        y
    }
}

/// Converts a compass bearing (degrees clockwise from north) to yaw.
pub fn yaw_from_bearing_deg(bearing: f64) -> f64 {
    normalize_yaw(FRAC_PI_2 - bearing.to_radians())
}

pub fn bearing_deg_from_yaw(yaw: f64) -> f64 {
    (90.0 - yaw.to_degrees()).rem_euclid(360.0)
}

/// Timestamped GPS position and IMU heading of the ego vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoPose {
    /// Seconds.
    pub timestamp: f64,
    pub lat: f64,
    pub lon: f64,
    /// Radians, counterclockwise from east, in `(-π, π]`.
    pub yaw: f64,
}

impl EgoPose {
    pub fn new(timestamp: f64, lat: f64, lon: f64, yaw: f64) -> Result<Self> {
        check_lat(lat)?;
        if !(lon.is_finite() && yaw.is_finite() && timestamp.is_finite()) {
            return Err(Error::Geodesy("pose fields must be finite".into()));
        }
        Ok(Self { timestamp, lat, lon, yaw: normalize_yaw(yaw) })
    }

    pub fn mercator(&self) -> Result<(f64, f64)> {
        wgs84_to_mercator(self.lat, self.lon)
    }

    /// The pose moved by `(east, north)` ground meters, keeping yaw.
    ///
    /// Uses the local scale at the starting latitude, which is exact to well
    /// under a millimeter over slice-sized offsets.
    pub fn offset_ground(&self, east: f64, north: f64) -> Result<Self> {
        let (x, y) = self.mercator()?;
        let k = local_scale(self.lat)?;
        let (lat, lon) = mercator_to_wgs84(x + k * east, y + k * north);
        Self::new(self.timestamp, lat, lon, self.yaw)
    }
}
