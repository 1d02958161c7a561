use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Contents of `mosaic.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MosaicMeta {
    pub crs: String,
    /// Mercator meters of pixel (0, 0).
    pub origin_x: f64,
    pub origin_y: f64,
    pub meters_per_pixel: f64,
    pub tile_size: u32,
    pub rows: usize,
    pub cols: usize,
}

impl MosaicMeta {
    pub const CRS: &'static str = "EPSG:3857";

    pub fn width_px(&self) -> usize {
        self.cols * self.tile_size as usize
    }

    pub fn height_px(&self) -> usize {
        self.rows * self.tile_size as usize
    }

    fn validate(&self) -> Result<()> {
        if self.crs != Self::CRS {
            return Err(Error::Format(format!("mosaic crs {:?}, expected {}", self.crs, Self::CRS)));
        }
        if !(self.meters_per_pixel > 0.0 && self.meters_per_pixel.is_finite()) {
            return Err(Error::Format(format!("meters_per_pixel {} must be positive", self.meters_per_pixel)));
        }
        if self.tile_size == 0 || self.rows == 0 || self.cols == 0 {
            return Err(Error::Format("mosaic must have nonzero tile_size, rows and cols".into()));
        }
        Ok(())
    }
}

/// Georeferenced RGB raster stored as a grid of square tiles.
///
/// Pixel `(px, py)` (column, row) sits at mercator
/// `(origin_x + px * mpp, origin_y - py * mpp)`; rows grow southward.
/// Tiles may be declared missing; reading a missing tile is an error.
#[derive(Debug, Clone)]
pub struct GeoMosaic {
    meta: MosaicMeta,
    tiles: Vec<Option<RgbImage>>,
}

impl GeoMosaic {
    pub fn new(meta: MosaicMeta, tiles: Vec<Option<RgbImage>>) -> Result<Self> {
        meta.validate()?;
        if tiles.len() != meta.rows * meta.cols {
            return Err(Error::Format(format!(
                "{} tiles for a {}x{} grid",
                tiles.len(),
                meta.rows,
                meta.cols
            )));
        }
        let ts = meta.tile_size;
        for tile in tiles.iter().flatten() {
            if tile.width() != ts || tile.height() != ts {
                return Err(Error::Format(format!(
                    "tile is {}x{}, expected {ts}x{ts}",
                    tile.width(),
                    tile.height()
                )));
            }
        }
        Ok(Self { meta, tiles })
    }

    /// Synthesizes a fully populated mosaic from a per-pixel function.
    pub fn from_fn(meta: MosaicMeta, f: impl Fn(usize, usize) -> [u8; 3]) -> Result<Self> {
        meta.validate()?;
        let ts = meta.tile_size as usize;
        let mut tiles = Vec::with_capacity(meta.rows * meta.cols);
        for r in 0..meta.rows {
            for c in 0..meta.cols {
                tiles.push(Some(RgbImage::from_fn(ts as u32, ts as u32, |x, y| {
                    image::Rgb(f(c * ts + x as usize, r * ts + y as usize))
                })));
            }
        }
        Self::new(meta, tiles)
    }

    pub fn meta(&self) -> &MosaicMeta {
        &self.meta
    }

    pub fn width_px(&self) -> usize {
        self.meta.width_px()
    }

    pub fn height_px(&self) -> usize {
        self.meta.height_px()
    }

    /// Marks a tile as missing.
    pub fn drop_tile(&mut self, row: usize, col: usize) {
        self.tiles[row * self.meta.cols + col] = None;
    }

    pub fn tile(&self, row: usize, col: usize) -> Option<&RgbImage> {
        self.tiles.get(row * self.meta.cols + col)?.as_ref()
    }

    pub fn pixel(&self, px: usize, py: usize) -> Result<[u8; 3]> {
        let ts = self.meta.tile_size as usize;
        let (row, col) = (py / ts, px / ts);
        let tile = self.tile(row, col).ok_or(Error::Tile { row, col })?;
        Ok(tile.get_pixel((px % ts) as u32, (py % ts) as u32).0)
    }

    pub fn mercator_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.meta;
        ((x - m.origin_x) / m.meters_per_pixel, (m.origin_y - y) / m.meters_per_pixel)
    }

    pub fn pixel_to_mercator(&self, px: f64, py: f64) -> (f64, f64) {
        let m = &self.meta;
        (m.origin_x + px * m.meters_per_pixel, m.origin_y - py * m.meters_per_pixel)
    }

    /// Mercator bounds `(min_x, min_y, max_x, max_y)` of the sampleable area
    /// (pixel lattice `[0, W-1] x [0, H-1]`).
    pub fn mercator_bounds(&self) -> (f64, f64, f64, f64) {
        let (x0, y_top) = self.pixel_to_mercator(0.0, 0.0);
        let (x1, y_bottom) =
            self.pixel_to_mercator((self.width_px() - 1) as f64, (self.height_px() - 1) as f64);
        (x0, y_bottom, x1, y_top)
    }

    /// Bilinear RGB sample at a continuous pixel coordinate, or `None` if
    /// the point is off the lattice.
    pub fn sample_bilinear(&self, px: f64, py: f64) -> Result<Option<[f64; 3]>> {
        let (w, h) = (self.width_px(), self.height_px());
        if !(px >= 0.0 && py >= 0.0 && px <= (w - 1) as f64 && py <= (h - 1) as f64) {
            return Ok(None);
        }
        let x0 = (px.floor() as usize).min(w - 1);
        let y0 = (py.floor() as usize).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let (fx, fy) = (px - x0 as f64, py - y0 as f64);
        let taps = [
            (x0, y0, (1.0 - fx) * (1.0 - fy)),
            (x1, y0, fx * (1.0 - fy)),
            (x0, y1, (1.0 - fx) * fy),
            (x1, y1, fx * fy),
        ];
        let mut acc = [0.0; 3];
        for (x, y, wt) in taps {
            if wt == 0.0 {
                continue;
            }
            let p = self.pixel(x, y)?;
            for c in 0..3 {
                acc[c] += wt * p[c] as f64;
            }
        }
        Ok(Some(acc))
    }

    fn tile_path(dir: &Path, row: usize, col: usize) -> PathBuf {
        dir.join(format!("tile_{row}_{col}.png"))
    }

    /// Reads `mosaic.json` and every `tile_{row}_{col}.png` present in `dir`.
    /// Absent tile files are recorded as missing tiles.
    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("mosaic.json");
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: MosaicMeta =
            serde_json::from_str(&text).map_err(|source| Error::Json { path: meta_path, source })?;
        meta.validate()?;
        let mut tiles = Vec::with_capacity(meta.rows * meta.cols);
        for r in 0..meta.rows {
            for c in 0..meta.cols {
                let path = Self::tile_path(dir, r, c);
                if !path.exists() {
                    tiles.push(None);
                    continue;
                }
                let img = image::open(&path)
                    .map_err(|source| Error::Image { path: path.clone(), source })?
                    .to_rgb8();
                tiles.push(Some(img));
            }
        }
        Self::new(meta, tiles)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta_path = dir.join("mosaic.json");
        let text = serde_json::to_string_pretty(&self.meta)
            .map_err(|source| Error::Json { path: meta_path.clone(), source })?;
        fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;
        for r in 0..self.meta.rows {
            for c in 0..self.meta.cols {
                if let Some(tile) = self.tile(r, c) {
                    let path = Self::tile_path(dir, r, c);
                    tile.save(&path).map_err(|source| Error::Image { path, source })?;
                }
            }
        }
        Ok(())
    }
}
