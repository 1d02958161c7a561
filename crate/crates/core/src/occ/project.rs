use serde::{Deserialize, Serialize};

use super::{classes, OccGrid};
use crate::error::{Error, Result};

/// Geometry of a BEV raster: `nx x ny` cells, cell `(i, j)` centered at
/// `(origin_x + (i + 0.5) * cell_x, origin_y + (j + 0.5) * cell_y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BevSpec {
    pub nx: usize,
    pub ny: usize,
    pub cell_x: f64,
    pub cell_y: f64,
    pub origin_x: f64,
    pub origin_y: f64,
}

impl BevSpec {
    /// Square grid of `n x n` cells of side `cell`, centered on the ego.
    pub fn centered(n: usize, cell: f64) -> Self {
        let half = n as f64 * cell / 2.0;
        Self { nx: n, ny: n, cell_x: cell, cell_y: cell, origin_x: -half, origin_y: -half }
    }

    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.origin_x + (i as f64 + 0.5) * self.cell_x,
            self.origin_y + (j as f64 + 0.5) * self.cell_y,
        ]
    }

    /// Cell containing ego-frame point `(x, y)`, if inside the extent.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fi = ((x - self.origin_x) / self.cell_x).floor();
        let fj = ((y - self.origin_y) / self.cell_y).floor();
        if fi >= 0.0 && fj >= 0.0 && fi < self.nx as f64 && fj < self.ny as f64 {
            Some((fi as usize, fj as usize))
        } else {
            None
        }
    }

    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }
}

/// A 2-D raster over the BEV grid, x-major like [`OccGrid`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BevMap<T> {
    pub nx: usize,
    pub ny: usize,
    pub data: Vec<T>,
}

impl<T: Clone> BevMap<T> {
    pub fn filled(nx: usize, ny: usize, value: T) -> Self {
        Self { nx, ny, data: vec![value; nx * ny] }
    }

    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[x * self.ny + y]
    }

    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[x * self.ny + y] = value;
    }
}

impl BevMap<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        if (self.nx, self.ny) != (other.nx, other.ny) {
            return Err(Error::dim("mask union", "nx,ny", &[other.nx, other.ny], &[self.nx, self.ny]));
        }
        Ok(Self {
            nx: self.nx,
            ny: self.ny,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a || b).collect(),
        })
    }
}

/// Top static voxel index per column; `None` where a column has no static voxel.
pub type HeightMap = BevMap<Option<u16>>;
/// Class of the top static voxel per column; free where the column is empty.
pub type SemanticMap = BevMap<u8>;

/// Binary 3-D mask with the same layout as [`OccGrid`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask3 {
    pub dims: [usize; 3],
    pub data: Vec<bool>,
}

impl Mask3 {
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[(x * self.dims[1] + y) * self.dims[2] + z]
    }
}

/// Voxels whose class is static.
pub fn static_mask(occ: &OccGrid) -> Mask3 {
    Mask3 {
        dims: occ.dims(),
        data: occ.classes().iter().map(|&c| classes::is_static(c)).collect(),
    }
}

/// Height of the highest static voxel in each column: the arg-max over
/// `k` of the static mask weighted by the z index.
pub fn height_map(occ: &OccGrid) -> HeightMap {
    let [nx, ny, _] = occ.dims();
    let mut out = BevMap::filled(nx, ny, None);
    for x in 0..nx {
        for y in 0..ny {
            let top = occ.column(x, y).iter().rposition(|&c| classes::is_static(c));
            out.set(x, y, top.map(|k| k as u16));
        }
    }
    out
}

/// Class of the occupancy grid at the height-map voxel of each column.
pub fn semantic_map(occ: &OccGrid, heights: &HeightMap) -> Result<SemanticMap> {
    let [nx, ny, nz] = occ.dims();
    if (heights.nx, heights.ny) != (nx, ny) {
        return Err(Error::dim("semantic_map", "height map nx,ny vs occupancy X,Y", &[heights.nx, heights.ny], &[nx, ny]));
    }
    let mut out = BevMap::filled(nx, ny, classes::FREE);
    for x in 0..nx {
        for y in 0..ny {
            if let Some(k) = *heights.get(x, y) {
                let k = k as usize;
                if k >= nz {
                    return Err(Error::dim("semantic_map", "height index vs Z", &[k], &[nz]));
                }
                out.set(x, y, occ.get(x, y, k));
            }
        }
    }
    Ok(out)
}

/// Oriented 3-D object box in the ego frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    /// Meters, `(x, y, z)`.
    pub center: [f64; 3],
    /// Meters, `(length, width, height)`; length runs along `yaw`.
    pub size: [f64; 3],
    /// Radians, counterclockwise from the ego x axis.
    pub yaw: f64,
    pub class_id: u8,
}

impl Box3D {
    pub fn validate(&self) -> Result<()> {
        if self.size.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Format(format!("box size {:?} must be positive", self.size)));
        }
        if !classes::is_dynamic(self.class_id) {
            return Err(Error::Format(format!("box class {} is not a dynamic class", self.class_id)));
        }
        Ok(())
    }

    /// Whether the ground point `(x, y)` lies in the yaw-rotated `l x w`
    /// footprint (boundary inclusive).
    pub fn footprint_contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        let (s, c) = self.yaw.sin_cos();
        let along = c * dx + s * dy;
        let across = -s * dx + c * dy;
        along.abs() <= self.size[0] / 2.0 && across.abs() <= self.size[1] / 2.0
    }
}

/// Cells whose centers fall inside the box footprint.
pub fn rasterize_box_bev(b: &Box3D, spec: &BevSpec) -> BevMap<bool> {
    let mut out = BevMap::filled(spec.nx, spec.ny, false);
    // Only scan the cells under the footprint's bounding circle.
    let r = 0.5 * b.size[0].hypot(b.size[1]);
    let range = |center: f64, origin: f64, cell: f64, n: usize| {
        let lo = ((center - r - origin) / cell - 0.5).floor().max(0.0) as usize;
        let hi = ((center + r - origin) / cell - 0.5).ceil() + 1.0;
        lo.min(n)..(hi.max(0.0) as usize).min(n)
    };
    for i in range(b.center[0], spec.origin_x, spec.cell_x, spec.nx) {
        for j in range(b.center[1], spec.origin_y, spec.cell_y, spec.ny) {
            let [cx, cy] = spec.cell_center(i, j);
            if b.footprint_contains(cx, cy) {
                out.set(i, j, true);
            }
        }
    }
    out
}

/// Columns holding at least one dynamic-class voxel.
pub fn dynamic_mask_from_occ(occ: &OccGrid) -> BevMap<bool> {
    let [nx, ny, _] = occ.dims();
    let mut out = BevMap::filled(nx, ny, false);
    for x in 0..nx {
        for y in 0..ny {
            if occ.column(x, y).iter().any(|&c| classes::is_dynamic(c)) {
                out.set(x, y, true);
            }
        }
    }
    out
}

pub fn dynamic_mask_from_boxes(boxes: &[Box3D], spec: &BevSpec) -> BevMap<bool> {
    let mut out = BevMap::filled(spec.nx, spec.ny, false);
    for b in boxes {
        let m = rasterize_box_bev(b, spec);
        for (o, v) in out.data.iter_mut().zip(m.data) {
            *o |= v;
        }
    }
    out
}

/// Union of the occupancy-derived and box-derived dynamic footprints.
pub fn dynamic_bev_mask(occ: &OccGrid, boxes: &[Box3D]) -> BevMap<bool> {
    let from_occ = dynamic_mask_from_occ(occ);
    let from_boxes = dynamic_mask_from_boxes(boxes, &occ.bev_spec());
    from_occ.union(&from_boxes).expect("both masks use the occupancy footprint")
}
