//! Brute-force reference implementations used by the equivalence checks.
//! They share no code with the production projections.

use crate::occ::{Box3D, OccGrid};

/// Table 4 per-class IoU rows, in taxonomy order.
pub const TABLE4_SA_OCC_V1: [f64; 17] = [
    10.8, 45.9, 20.5, 46.6, 51.1, 23.0, 22.7, 23.1, 21.4, 33.3, 38.2, 82.6, 43.8, 54.0, 58.5, 47.0, 41.4,
];
pub const TABLE4_FLASHOCC_M1: [f64; 17] = [
    6.7, 37.7, 10.3, 39.6, 44.4, 14.9, 13.4, 15.8, 15.4, 27.4, 31.7, 78.8, 38.0, 48.7, 52.5, 37.9, 32.2,
];
/// Published `(mIoU, D-mIoU, S-mIoU)` for the two rows above.
pub const TABLE1_SA_OCC_V1: (f64, f64, f64) = (39.05, 30.59, 54.55);
pub const TABLE1_FLASHOCC_M1: (f64, f64, f64) = (32.08, 23.38, 48.02);

fn dims(occ: &OccGrid) -> (usize, usize, usize) {
    let [x, y, z] = occ.dims();
    (x, y, z)
}

pub fn static_mask(occ: &OccGrid) -> Vec<Vec<Vec<bool>>> {
    let (nx, ny, nz) = dims(occ);
    let mut m = vec![vec![vec![false; nz]; ny]; nx];
    for (i, plane) in m.iter_mut().enumerate() {
        for (j, col) in plane.iter_mut().enumerate() {
            for (k, v) in col.iter_mut().enumerate() {
                let c = occ.get(i, j, k);
                *v = (11..=16).contains(&c);
            }
        }
    }
    m
}

/// Highest `k` whose voxel is static, found by weighting the mask with `k`
/// and keeping the last maximum; `None` for columns without static voxels.
pub fn height_map(occ: &OccGrid) -> Vec<Vec<Option<usize>>> {
    let (nx, ny, nz) = dims(occ);
    let m = static_mask(occ);
    let mut h = vec![vec![None; ny]; nx];
    for i in 0..nx {
        for j in 0..ny {
            let mut best: Option<(usize, usize)> = None;
            for k in 0..nz {
                if !m[i][j][k] {
                    continue;
                }
                let v = k; // m * E_z
                if best.is_none_or(|(bv, _)| v >= bv) {
                    best = Some((v, k));
                }
            }
            h[i][j] = best.map(|(_, k)| k);
        }
    }
    h
}

pub fn semantic_map(occ: &OccGrid) -> Vec<Vec<u8>> {
    let h = height_map(occ);
    h.iter()
        .enumerate()
        .map(|(i, row)| row.iter().enumerate().map(|(j, hk)| hk.map_or(17, |k| occ.get(i, j, k))).collect())
        .collect()
}

/// Inclusive point-in-convex-polygon test against the four box corners.
fn inside_corners(corners: &[[f64; 2]; 4], p: [f64; 2]) -> bool {
    let mut sign = 0.0f64;
    for e in 0..4 {
        let a = corners[e];
        let b = corners[(e + 1) % 4];
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        if cross != 0.0 {
            if sign != 0.0 && cross.signum() != sign {
                return false;
            }
            sign = cross.signum();
        }
    }
    true
}

pub fn box_corners(b: &Box3D) -> [[f64; 2]; 4] {
    let (hl, hw) = (b.size[0] / 2.0, b.size[1] / 2.0);
    let (s, c) = b.yaw.sin_cos();
    [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(a, d)| [b.center[0] + a * c - d * s, b.center[1] + a * s + d * c])
}

pub fn rasterize_box(b: &Box3D, nx: usize, ny: usize, cell: [f64; 2], origin: [f64; 2]) -> Vec<Vec<bool>> {
    let corners = box_corners(b);
    (0..nx)
        .map(|i| {
            (0..ny)
                .map(|j| {
                    let p = [origin[0] + (i as f64 + 0.5) * cell[0], origin[1] + (j as f64 + 0.5) * cell[1]];
                    inside_corners(&corners, p)
                })
                .collect()
        })
        .collect()
}

pub fn dynamic_mask(occ: &OccGrid, boxes: &[Box3D]) -> Vec<Vec<bool>> {
    let (nx, ny, nz) = dims(occ);
    let v = occ.voxel_size();
    let o = occ.origin();
    let mut m = vec![vec![false; ny]; nx];
    for i in 0..nx {
        for j in 0..ny {
            for k in 0..nz {
                if occ.get(i, j, k) <= 10 {
                    m[i][j] = true;
                }
            }
        }
    }
    for b in boxes {
        let r = rasterize_box(b, nx, ny, [v[0], v[1]], [o[0], o[1]]);
        for i in 0..nx {
            for j in 0..ny {
                m[i][j] |= r[i][j];
            }
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corner_test_is_inclusive() {
        let b = Box3D { center: [0.0; 3], size: [2.0, 2.0, 1.0], yaw: 0.0, class_id: 4 };
        let c = box_corners(&b);
        assert!(inside_corners(&c, [1.0, 0.0]));
        assert!(inside_corners(&c, [1.0, 1.0]));
        assert!(!inside_corners(&c, [1.0001, 0.0]));
    }
}
