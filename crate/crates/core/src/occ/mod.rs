//! Occupancy grids, the class taxonomy, and label projections onto the
//! satellite / BEV plane.

mod codec;
mod project;

pub use codec::{read_boxes, read_occ, write_boxes, write_occ, OCC_MAGIC};
pub use project::{
    dynamic_bev_mask, dynamic_mask_from_boxes, dynamic_mask_from_occ, height_map, rasterize_box_bev, semantic_map,
    static_mask, BevMap, BevSpec, Box3D, HeightMap, Mask3, SemanticMap,
};

use crate::error::{Error, Result};

/// Class ids follow the Occ3D-nuScenes ordering.
pub mod classes {
    /// Movable object categories.
    pub const DYNAMIC: std::ops::RangeInclusive<u8> = 0..=10;
    /// Non-movable scene categories.
    pub const STATIC: std::ops::RangeInclusive<u8> = 11..=16;
    /// Empty space.
    pub const FREE: u8 = 17;
    /// Number of evaluated semantic classes (free excluded).
    pub const NUM_SEMANTIC: usize = 17;

    pub const NAMES: [&str; NUM_SEMANTIC] = [
        "others",
        "barrier",
        "bicycle",
        "bus",
        "car",
        "construction_vehicle",
        "motorcycle",
        "pedestrian",
        "traffic_cone",
        "trailer",
        "truck",
        "driveable_surface",
        "other_flat",
        "sidewalk",
        "terrain",
        "manmade",
        "vegetation",
    ];

    pub fn is_dynamic(id: u8) -> bool {
        DYNAMIC.contains(&id)
    }

    pub fn is_static(id: u8) -> bool {
        STATIC.contains(&id)
    }

    pub fn name(id: u8) -> &'static str {
        NAMES.get(id as usize).copied().unwrap_or("free")
    }
}

/// Dense `X x Y x Z` grid of class ids in the ego frame.
///
/// Storage is x-major, then y, then z. `origin` is the ego-frame position
/// of the minimum corner of voxel `(0, 0, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccGrid {
    dims: [usize; 3],
    voxel_size: [f64; 3],
    origin: [f64; 3],
    classes: Vec<u8>,
}

impl OccGrid {
    pub const DEFAULT_VOXEL: f64 = 0.4;
    pub const DEFAULT_Z_MIN: f64 = -1.0;

    /// Grid centered on the ego in x/y with the default 0.4 m voxels and a
    /// floor at -1 m.
    pub fn new(dims: [usize; 3], classes: Vec<u8>) -> Result<Self> {
        let v = Self::DEFAULT_VOXEL;
        let origin = [
            -(dims[0] as f64) * v / 2.0,
            -(dims[1] as f64) * v / 2.0,
            Self::DEFAULT_Z_MIN,
        ];
        Self::with_geometry(dims, [v; 3], origin, classes)
    }

    pub fn with_geometry(dims: [usize; 3], voxel_size: [f64; 3], origin: [f64; 3], classes: Vec<u8>) -> Result<Self> {
        let n = dims.iter().product();
        if classes.len() != n {
            return Err(Error::dim("OccGrid", "voxel count", &[classes.len()], &[n]));
        }
        if let Some(&bad) = classes.iter().find(|&&c| c > classes::FREE) {
            return Err(Error::Format(format!("class id {bad} exceeds {}", classes::FREE)));
        }
        if voxel_size.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Domain(format!("voxel size {voxel_size:?} must be positive")));
        }
        Ok(Self { dims, voxel_size, origin, classes })
    }

    pub fn filled(dims: [usize; 3], class: u8) -> Result<Self> {
        Self::new(dims, vec![class; dims.iter().product()])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        self.voxel_size
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.dims[1] + y) * self.dims[2] + z
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.classes[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, class: u8) {
        assert!(class <= classes::FREE, "class id {class} out of range");
        let i = self.index(x, y, z);
        self.classes[i] = class;
    }

    /// The `z` column at `(x, y)`.
    pub fn column(&self, x: usize, y: usize) -> &[u8] {
        let start = self.index(x, y, 0);
        &self.classes[start..start + self.dims[2]]
    }

    /// The BEV grid covering this grid's x/y footprint.
    pub fn bev_spec(&self) -> BevSpec {
        BevSpec {
            nx: self.dims[0],
            ny: self.dims[1],
            cell_x: self.voxel_size[0],
            cell_y: self.voxel_size[1],
            origin_x: self.origin[0],
            origin_y: self.origin[1],
        }
    }

    /// Voxel count per class id `0..=17`.
    pub fn class_counts(&self) -> [u64; 18] {
        let mut counts = [0u64; 18];
        for &c in &self.classes {
            counts[c as usize] += 1;
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taxonomy_partition() {
        assert_eq!(classes::DYNAMIC.count(), 11);
        assert_eq!(classes::STATIC.count(), 6);
        for id in 0..=classes::FREE {
            let n = classes::is_dynamic(id) as u8 + classes::is_static(id) as u8 + (id == classes::FREE) as u8;
            assert_eq!(n, 1, "id {id}");
        }
        assert_eq!(classes::name(11), "driveable_surface");
        assert_eq!(classes::name(16), "vegetation");
        assert_eq!(classes::name(17), "free");
    }

    #[test]
    fn standard_grid_spans_80m() {
        let g = OccGrid::filled([200, 200, 16], classes::FREE).unwrap();
        let spec = g.bev_spec();
        assert_eq!(spec.nx as f64 * spec.cell_x, 80.0);
        assert_eq!(spec.origin_x, -40.0);
    }

    #[test]
    fn rejects_bad_ids_and_lengths() {
        assert!(OccGrid::new([2, 2, 2], vec![18; 8]).is_err());
        assert!(OccGrid::new([2, 2, 2], vec![0; 7]).is_err());
    }

    #[test]
    fn layout_is_x_major() {
        let mut g = OccGrid::filled([3, 4, 5], classes::FREE).unwrap();
        g.set(2, 1, 3, 4);
        assert_eq!(g.classes()[(2 * 4 + 1) * 5 + 3], 4);
        assert_eq!(g.column(2, 1)[3], 4);
    }
}
