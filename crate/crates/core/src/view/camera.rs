use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole camera over a feature map of `height x width` pixels.
///
/// The camera frame is x right, y down, z forward; depth is the camera z.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    intrinsics: Matrix3<f64>,
    cam_from_ego: Matrix4<f64>,
    height: usize,
    width: usize,
}

/// On-disk form of a [`Camera`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Row-major 4x4.
    pub cam_from_ego: [f64; 16],
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, cam_from_ego: Matrix4<f64>, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::Domain(format!("focal lengths must be positive, got fx={fx} fy={fy}")));
        }
        if !(cx.is_finite() && cy.is_finite()) || width == 0 || height == 0 {
            return Err(Error::Domain("camera principal point and image size must be valid".into()));
        }
        if cam_from_ego.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("cam_from_ego has non-finite entries".into()));
        }
        let r = cam_from_ego.fixed_view::<3, 3>(0, 0).into_owned();
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        if ortho > 1e-9 || r.determinant() < 0.0 {
            return Err(Error::Domain(format!("cam_from_ego rotation is not orthonormal (deviation {ortho:.3e})")));
        }
        let bottom = cam_from_ego.row(3);
        if bottom[0] != 0.0 || bottom[1] != 0.0 || bottom[2] != 0.0 || bottom[3] != 1.0 {
            return Err(Error::Domain("cam_from_ego bottom row must be [0, 0, 0, 1]".into()));
        }
        let intrinsics = Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0);
        Ok(Self { intrinsics, cam_from_ego, height, width })
    }

    pub fn from_spec(s: &CameraSpec) -> Result<Self> {
        Self::new(s.fx, s.fy, s.cx, s.cy, Matrix4::from_row_slice(&s.cam_from_ego), s.width, s.height)
    }

    pub fn to_spec(&self) -> CameraSpec {
        let mut m = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                m[r * 4 + c] = self.cam_from_ego[(r, c)];
            }
        }
        CameraSpec {
            fx: self.fx(),
            fy: self.fy(),
            cx: self.cx(),
            cy: self.cy(),
            cam_from_ego: m,
            width: self.width,
            height: self.height,
        }
    }

    /// A camera at ego position `center` looking horizontally along `yaw`
    /// (counterclockwise from the ego x axis).
    pub fn looking_at_yaw(fx: f64, fy: f64, cx: f64, cy: f64, center: [f64; 3], yaw: f64, width: usize, height: usize) -> Result<Self> {
        let (s, c) = yaw.sin_cos();
        // rows: camera x (right), y (down), z (forward) in ego coordinates
        let r = Matrix3::new(s, -c, 0.0, 0.0, 0.0, -1.0, c, s, 0.0);
        let t = -(r * Vector3::from(center));
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Self::new(fx, fy, cx, cy, m, width, height)
    }

    pub fn fx(&self) -> f64 {
        self.intrinsics[(0, 0)]
    }

    pub fn fy(&self) -> f64 {
        self.intrinsics[(1, 1)]
    }

    pub fn cx(&self) -> f64 {
        self.intrinsics[(0, 2)]
    }

    pub fn cy(&self) -> f64 {
        self.intrinsics[(1, 2)]
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.intrinsics
    }

    pub fn cam_from_ego(&self) -> &Matrix4<f64> {
        &self.cam_from_ego
    }

    /// `(H, W)` of the feature map this camera samples.
    pub fn image_size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.cam_from_ego.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.cam_from_ego.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn ego_to_cam(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.rotation() * Vector3::from(p) + self.translation();
        [q.x, q.y, q.z]
    }

    pub fn cam_to_ego(&self, q: [f64; 3]) -> [f64; 3] {
        let r = self.rotation();
        let p = r.transpose() * (Vector3::from(q) - self.translation());
        [p.x, p.y, p.z]
    }

    /// Ego-frame point at camera depth `depth` along the ray through pixel `(u, v)`.
    pub fn lift(&self, u: f64, v: f64, depth: f64) -> [f64; 3] {
        let x = (u - self.cx()) / self.fx() * depth;
        let y = (v - self.cy()) / self.fy() * depth;
        self.cam_to_ego([x, y, depth])
    }

    /// Whether `(u, v)` lies in the bilinear sampling domain `[0, W-1] x [0, H-1]`.
    pub fn in_image(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64
    }

    /// The same camera moved by `delta` meters in the ego frame.
    pub fn translated(&self, delta: [f64; 3]) -> Self {
        let mut m = self.cam_from_ego;
        let shift = -(self.rotation() * Vector3::from(delta));
        for i in 0..3 {
            m[(i, 3)] += shift[i];
        }
        Self { cam_from_ego: m, ..self.clone() }
    }
}

/// The `V` street-view cameras.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    cameras: Vec<Camera>,
}

#[derive(Serialize, Deserialize)]
struct RigFile {
    cameras: Vec<CameraSpec>,
}

impl CameraRig {
    pub fn new(cameras: Vec<Camera>) -> Result<Self> {
        if cameras.is_empty() {
            return Err(Error::Domain("a camera rig needs at least one camera".into()));
        }
        Ok(Self { cameras })
    }

    pub fn cameras(&self) -> &[Camera] {
        &self.cameras
    }

    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    /// The first `n` cameras.
    pub fn take(&self, n: usize) -> Result<Self> {
        Self::new(self.cameras.iter().take(n).cloned().collect())
    }

    pub fn translated(&self, delta: [f64; 3]) -> Self {
        Self { cameras: self.cameras.iter().map(|c| c.translated(delta)).collect() }
    }

    /// `V` cameras at `height` meters above the ego origin, evenly spaced in
    /// yaw, each with the given horizontal field of view over a
    /// `rows x cols` feature map.
    pub fn ring(v: usize, height: f64, hfov_deg: f64, rows: usize, cols: usize) -> Result<Self> {
        let f = cols as f64 / 2.0 / (hfov_deg.to_radians() / 2.0).tan();
        let cx = (cols as f64 - 1.0) / 2.0;
        let cy = (rows as f64 - 1.0) / 2.0;
        let cams = (0..v)
            .map(|i| {
                let yaw = std::f64::consts::TAU * i as f64 / v as f64;
                Camera::looking_at_yaw(f, f, cx, cy, [0.0, 0.0, height], yaw, cols, rows)
            })
            .collect::<Result<_>>()?;
        Self::new(cams)
    }

    /// Six cameras at 60° spacing, 1.5 m up, 70° horizontal FOV over 16x44
    /// feature maps.
    pub fn synthetic_surround() -> Self {
        Self::ring(6, 1.5, 70.0, 16, 44).expect("fixed synthetic rig is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: RigFile = serde_json::from_str(&text).map_err(|source| Error::Json { path: path.into(), source })?;
        Self::new(file.cameras.iter().map(Camera::from_spec).collect::<Result<_>>()?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = RigFile { cameras: self.cameras.iter().map(Camera::to_spec).collect() };
        let text = serde_json::to_string_pretty(&file).map_err(|source| Error::Json { path: path.into(), source })?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_camera_axes() {
        let cam = Camera::looking_at_yaw(10.0, 10.0, 4.0, 3.0, [0.0, 0.0, 1.5], 0.0, 9, 7).unwrap();
        // a point ahead of the camera at its height is on the optical axis
        assert_eq!(cam.ego_to_cam([5.0, 0.0, 1.5]), [0.0, 0.0, 5.0]);
        // ego +y is to the left, i.e. negative camera x
        assert!(cam.ego_to_cam([5.0, 1.0, 1.5])[0] < 0.0);
        // up is negative camera y
        assert!(cam.ego_to_cam([5.0, 0.0, 2.5])[1] < 0.0);
    }

    #[test]
    fn lift_inverts_projection() {
        let cam = Camera::looking_at_yaw(20.0, 18.0, 10.0, 6.0, [0.3, -0.2, 1.5], 0.9, 21, 13).unwrap();
        let p = cam.lift(3.25, 8.5, 7.0);
        let q = cam.ego_to_cam(p);
        assert!((q[2] - 7.0).abs() < 1e-12);
        assert!((20.0 * q[0] / q[2] + 10.0 - 3.25).abs() < 1e-12);
        assert!((18.0 * q[1] / q[2] + 6.0 - 8.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_cameras() {
        let m = Matrix4::identity();
        assert!(Camera::new(0.0, 1.0, 0.0, 0.0, m, 4, 4).is_err());
        let mut skew = m;
        skew[(0, 1)] = 1e-6;
        assert!(Camera::new(1.0, 1.0, 0.0, 0.0, skew, 4, 4).is_err());
        let mut mirror = m;
        mirror[(0, 0)] = -1.0;
        assert!(Camera::new(1.0, 1.0, 0.0, 0.0, mirror, 4, 4).is_err());
        assert!(CameraRig::new(vec![]).is_err());
    }

    #[test]
    fn synthetic_rig_geometry() {
        let rig = CameraRig::synthetic_surround();
        assert_eq!(rig.len(), 6);
        let cam = &rig.cameras()[0];
        assert_eq!(cam.image_size(), (16, 44));
        assert!((cam.fx() - 22.0 / 35f64.to_radians().tan()).abs() < 1e-12);
        assert_eq!(cam.cam_to_ego([0.0, 0.0, 0.0]), [0.0, 0.0, 1.5]);
    }

    #[test]
    fn rig_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rig.json");
        let rig = CameraRig::synthetic_surround();
        rig.save(&path).unwrap();
        assert_eq!(CameraRig::load(&path).unwrap(), rig);
    }
}
