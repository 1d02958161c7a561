use std::fs;
use std::path::{Path, PathBuf};

use satocc::occ::BevSpec;
use satocc::view::SamplePoints;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory with `mosaic.json` and tiles.
    pub mosaic: Option<PathBuf>,
    /// JSON-lines pose file.
    pub poses: Option<PathBuf>,
    /// Directory of `<token>.occ` grids with optional `<token>.boxes.jsonl`.
    pub occ: Option<PathBuf>,
    pub rig: Option<PathBuf>,
    pub pred: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Occupancy and BEV grid geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// `X, Y, Z` voxels.
    pub dims: [usize; 3],
    /// Meters per voxel along x, y, z.
    pub voxel_size: [f64; 3],
    /// Meters covered along x and y; must equal `dims * voxel_size`.
    pub extent: [f64; 2],
    /// Height of the bottom voxel face.
    pub z_min: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { dims: [200, 200, 16], voxel_size: [0.4; 3], extent: [80.0, 80.0], z_min: -1.0 }
    }
}

impl GridConfig {
    pub fn origin(&self) -> [f64; 3] {
        [-self.extent[0] / 2.0, -self.extent[1] / 2.0, self.z_min]
    }

    pub fn bev_spec(&self) -> BevSpec {
        let [ox, oy, _] = self.origin();
        BevSpec {
            nx: self.dims[0],
            ny: self.dims[1],
            cell_x: self.voxel_size[0],
            cell_y: self.voxel_size[1],
            origin_x: ox,
            origin_y: oy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub grid: GridConfig,
    pub seed: u64,
    /// Restrict evaluation to voxels flagged in `<token>.mask` next to the
    /// ground truth.
    pub observe_mask: bool,
    /// Sample heights per pillar for the backward transform.
    pub z_levels: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            grid: GridConfig::default(),
            seed: 0,
            observe_mask: false,
            z_levels: SamplePoints::DEFAULT_Z_LEVELS,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::new("config-not-found", format!("{}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::new("config-invalid", format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let g = &self.grid;
        if g.dims.contains(&0) || g.voxel_size.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(CliError::new("config-invalid", "grid dims and voxel sizes must be positive"));
        }
        for axis in 0..2 {
            let span = g.dims[axis] as f64 * g.voxel_size[axis];
            if (span - g.extent[axis]).abs() > 1e-9 * span.max(1.0) {
                return Err(CliError::new(
                    "config-invalid",
                    format!(
                        "axis {axis}: {} voxels x {} m = {span} m but extent is {} m",
                        g.dims[axis], g.voxel_size[axis], g.extent[axis]
                    ),
                ));
            }
        }
        if self.z_levels == 0 {
            return Err(CliError::new("config-invalid", "z_levels must be at least 1"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_json() {
        let mut cfg = RunConfig::default();
        cfg.paths.mosaic = Some("tiles".into());
        cfg.grid = GridConfig { dims: [3, 7, 2], voxel_size: [0.1, 0.3, 0.7], extent: [0.30000000000000004, 2.1], z_min: -0.3 };
        cfg.seed = u64::MAX;
        let back: RunConfig = serde_json::from_str(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn extent_must_match_dims() {
        let mut cfg = RunConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.grid.extent[1] = 81.0;
        assert_eq!(cfg.validate().unwrap_err().kind, "config-invalid");
    }

    #[test]
    fn default_origin_matches_occupancy_default() {
        let g = GridConfig::default();
        assert_eq!(g.origin(), [-40.0, -40.0, -1.0]);
        assert_eq!(g.bev_spec(), BevSpec::centered(200, 0.4));
    }
}
