//! Virtual RGB-D renderer.
//!
//! Projects world-frame point sets through a pinhole camera and keeps the
//! closest surface per pixel. Points are splatted to single pixels with
//! nearest-integer rounding; pixels nothing lands on carry a zero sentinel
//! plus a cleared validity bit.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use thiserror::Error;

use crate::rotmath::{RotError, RotMatrix};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("invalid camera extrinsics: {0}")]
    InvalidExtrinsics(&'static str),
    #[error(transparent)]
    Rotation(#[from] RotError),
    #[error("bad depth container magic")]
    BadMagic,
    #[error("unsupported depth container version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated depth container")]
    Truncated,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, RenderError> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(RenderError::InvalidIntrinsics("focal lengths must be positive"));
        }
        if cx < 0.0 || cx >= width as f64 || cy < 0.0 || cy >= height as f64 {
            return Err(RenderError::InvalidIntrinsics("principal point outside image"));
        }
        Ok(CameraIntrinsics { fx, fy, cx, cy, width, height })
    }

    pub fn k_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, 0.0, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }
}

/// Rigid world-to-camera transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraExtrinsics {
    rotation: RotMatrix,
    translation: Vector3<f64>,
}

impl CameraExtrinsics {
    pub fn identity() -> Self {
        CameraExtrinsics {
            rotation: RotMatrix::IDENTITY,
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: RotMatrix, translation: Vector3<f64>) -> Self {
        CameraExtrinsics { rotation, translation }
    }

    /// Validates the rotation block and the homogeneous bottom row of a
    /// 4x4 world-to-camera matrix.
    pub fn from_matrix(t_cw: &Matrix4<f64>) -> Result<Self, RenderError> {
        let bottom = t_cw.row(3);
        if bottom[0] != 0.0 || bottom[1] != 0.0 || bottom[2] != 0.0 || bottom[3] != 1.0 {
            return Err(RenderError::InvalidExtrinsics("bottom row must be (0,0,0,1)"));
        }
        let rotation = RotMatrix::try_new(t_cw.fixed_view::<3, 3>(0, 0).into_owned())?;
        Ok(CameraExtrinsics {
            rotation,
            translation: t_cw.fixed_view::<3, 1>(0, 3).into_owned(),
        })
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn rotation(&self) -> &RotMatrix {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform_point(&self, p_w: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.apply(p_w) + self.translation
    }
}

/// One projected point: integer pixel, camera-frame depth, validity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint {
    pub pixel: [i64; 2],
    pub depth: f64,
    pub valid: bool,
}

/// Projects homogeneous world points (w = 1) to integer pixel coordinates.
/// A point is valid iff it lands in front of the camera and its rounded
/// pixel is inside the image; invalid points are flagged, never dropped.
pub fn project_points(
    intrinsics: &CameraIntrinsics,
    extrinsics: &CameraExtrinsics,
    points_w: &[Vector4<f64>],
) -> Vec<ProjectedPoint> {
    points_w
        .iter()
        .map(|p| {
            debug_assert!(p.w == 1.0, "world points must be homogeneous with w = 1");
            let p_c = extrinsics.transform_point(&p.xyz());
            let z = p_c.z;
            if z <= 0.0 || !z.is_finite() {
                return ProjectedPoint { pixel: [0, 0], depth: z, valid: false };
            }
            let u = (intrinsics.fx * p_c.x / z + intrinsics.cx).round() as i64;
            let v = (intrinsics.fy * p_c.y / z + intrinsics.cy).round() as i64;
            let inside = u >= 0
                && u < intrinsics.width as i64
                && v >= 0
                && v < intrinsics.height as i64;
            ProjectedPoint { pixel: [u, v], depth: z, valid: inside }
        })
        .collect()
}

/// Metric depth image with a validity mask. Empty pixels hold 0.0, which is
/// never a legal depth.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    data: Vec<f32>,
    valid: Vec<bool>,
}

const DEPTH_MAGIC: &[u8; 4] = b"DPTH";
const DEPTH_VERSION: u32 = 1;

impl DepthMap {
    pub fn empty(width: u32, height: u32) -> Self {
        let n = (width * height) as usize;
        DepthMap {
            width,
            height,
            data: vec![0.0; n],
            valid: vec![false; n],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, u: u32, v: u32) -> Option<f32> {
        let i = (v * self.width + u) as usize;
        self.valid[i].then(|| self.data[i])
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Min-update one pixel.
    fn splat(&mut self, u: i64, v: i64, depth: f64) {
        let i = (v as u32 * self.width + u as u32) as usize;
        let d = depth as f32;
        if !self.valid[i] || d < self.data[i] {
            self.data[i] = d;
            self.valid[i] = true;
        }
    }

    /// Clamps every valid depth to `max_depth`. Applied by the dataset
    /// writer, not by the renderer itself.
    pub fn clamp_max(&mut self, max_depth: f32) {
        for (d, &ok) in self.data.iter_mut().zip(self.valid.iter()) {
            if ok && *d > max_depth {
                *d = max_depth;
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RenderError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(DEPTH_MAGIC)?;
        w.write_u32::<LittleEndian>(DEPTH_VERSION)?;
        w.write_u32::<LittleEndian>(self.width)?;
        w.write_u32::<LittleEndian>(self.height)?;
        for d in &self.data {
            w.write_f32::<LittleEndian>(*d)?;
        }
        // packed validity bits, row-major, LSB first
        let mut byte = 0u8;
        for (i, &ok) in self.valid.iter().enumerate() {
            if ok {
                byte |= 1 << (i % 8);
            }
            if i % 8 == 7 {
                w.write_u8(byte)?;
                byte = 0;
            }
        }
        if self.valid.len() % 8 != 0 {
            w.write_u8(byte)?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RenderError> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| RenderError::Truncated)?;
        if &magic != DEPTH_MAGIC {
            return Err(RenderError::BadMagic);
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != DEPTH_VERSION {
            return Err(RenderError::UnsupportedVersion(version));
        }
        let width = r.read_u32::<LittleEndian>()?;
        let height = r.read_u32::<LittleEndian>()?;
        let n = (width * height) as usize;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(r.read_f32::<LittleEndian>().map_err(|_| RenderError::Truncated)?);
        }
        let mut valid = Vec::with_capacity(n);
        let mut byte = 0u8;
        for i in 0..n {
            if i % 8 == 0 {
                byte = r.read_u8().map_err(|_| RenderError::Truncated)?;
            }
            valid.push(byte & (1 << (i % 8)) != 0);
        }
        Ok(DepthMap { width, height, data, valid })
    }
}

/// Renders a z-buffered depth map from any number of world-frame point
/// sets (hand and object clouds are separate sets by convention).
pub fn render_depth(
    intrinsics: &CameraIntrinsics,
    extrinsics: &CameraExtrinsics,
    point_sets: &[&[Vector4<f64>]],
) -> DepthMap {
    let mut map = DepthMap::empty(intrinsics.width, intrinsics.height);
    for set in point_sets {
        for p in project_points(intrinsics, extrinsics, set) {
            if p.valid {
                map.splat(p.pixel[0], p.pixel[1], p.depth);
            }
        }
    }
    map
}

/// Lifts 3-vectors to homogeneous form for the projection API.
pub fn homogeneous(points: &[Vector3<f64>]) -> Vec<Vector4<f64>> {
    points.iter().map(|p| Vector4::new(p.x, p.y, p.z, 1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn test_camera() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 128.0, 128.0, 256, 256).unwrap()
    }

    #[test]
    fn optical_axis_point_hits_principal_point() {
        let pts = [Vector4::new(0.0, 0.0, 1.0, 1.0)];
        let proj = project_points(&test_camera(), &CameraExtrinsics::identity(), &pts);
        assert_eq!(proj[0].pixel, [128, 128]);
        assert_eq!(proj[0].depth, 1.0);
        assert!(proj[0].valid);
    }

    #[test]
    fn behind_camera_is_invalid() {
        let pts = [Vector4::new(0.0, 0.0, -1.0, 1.0)];
        let proj = project_points(&test_camera(), &CameraExtrinsics::identity(), &pts);
        assert!(!proj[0].valid);
    }

    #[test]
    fn lateral_offset_moves_one_pixel() {
        let pts = [Vector4::new(0.01, 0.0, 1.0, 1.0)];
        let proj = project_points(&test_camera(), &CameraExtrinsics::identity(), &pts);
        assert_eq!(proj[0].pixel, [129, 128]);
        assert_eq!(proj[0].depth, 1.0);
    }

    #[test]
    fn out_of_frame_is_flagged_not_dropped() {
        let pts = [
            Vector4::new(10.0, 0.0, 1.0, 1.0),
            Vector4::new(0.0, 0.0, 1.0, 1.0),
        ];
        let proj = project_points(&test_camera(), &CameraExtrinsics::identity(), &pts);
        assert_eq!(proj.len(), 2);
        assert!(!proj[0].valid);
        assert!(proj[1].valid);
    }

    #[test]
    fn zbuffer_keeps_closest() {
        let pts = [
            Vector4::new(0.0, 0.0, 1.5, 1.0),
            Vector4::new(0.0, 0.0, 0.5, 1.0),
        ];
        let map = render_depth(&test_camera(), &CameraExtrinsics::identity(), &[&pts]);
        assert_eq!(map.get(128, 128), Some(0.5));
    }

    #[test]
    fn empty_point_set_renders_all_sentinel() {
        let map = render_depth(&test_camera(), &CameraExtrinsics::identity(), &[&[]]);
        assert_eq!(map.valid_count(), 0);
        assert!(map.data().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn render_is_order_independent() {
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        let mut pts: Vec<Vector4<f64>> = (0..500)
            .map(|_| {
                Vector4::new(
                    (rng.random::<f64>() - 0.5) * 0.8,
                    (rng.random::<f64>() - 0.5) * 0.8,
                    0.2 + rng.random::<f64>(),
                    1.0,
                )
            })
            .collect();
        let a = render_depth(&test_camera(), &CameraExtrinsics::identity(), &[&pts]);
        pts.reverse();
        let b = render_depth(&test_camera(), &CameraExtrinsics::identity(), &[&pts]);
        assert_eq!(a, b);
    }

    #[test]
    fn adding_points_never_raises_depth() {
        let mut rng = ChaCha12Rng::seed_from_u64(43);
        let pts: Vec<Vector4<f64>> = (0..300)
            .map(|_| {
                Vector4::new(
                    (rng.random::<f64>() - 0.5) * 0.6,
                    (rng.random::<f64>() - 0.5) * 0.6,
                    0.2 + rng.random::<f64>(),
                    1.0,
                )
            })
            .collect();
        let extra: Vec<Vector4<f64>> = (0..300)
            .map(|_| {
                Vector4::new(
                    (rng.random::<f64>() - 0.5) * 0.6,
                    (rng.random::<f64>() - 0.5) * 0.6,
                    0.2 + rng.random::<f64>(),
                    1.0,
                )
            })
            .collect();
        let base = render_depth(&test_camera(), &CameraExtrinsics::identity(), &[&pts]);
        let more = render_depth(&test_camera(), &CameraExtrinsics::identity(), &[&pts, &extra]);
        for i in 0..base.data().len() {
            if base.validity()[i] {
                assert!(more.validity()[i]);
                assert!(more.data()[i] <= base.data()[i]);
            }
        }
    }

    #[test]
    fn unprojection_recovers_camera_point_within_a_pixel() {
        let cam = test_camera();
        let mut rng = ChaCha12Rng::seed_from_u64(47);
        for _ in 0..500 {
            let p = Vector3::new(
                (rng.random::<f64>() - 0.5) * 0.8,
                (rng.random::<f64>() - 0.5) * 0.8,
                0.3 + rng.random::<f64>(),
            );
            let proj = project_points(
                &cam,
                &CameraExtrinsics::identity(),
                &[Vector4::new(p.x, p.y, p.z, 1.0)],
            )[0];
            if !proj.valid {
                continue;
            }
            let x = (proj.pixel[0] as f64 - cam.cx) * proj.depth / cam.fx;
            let y = (proj.pixel[1] as f64 - cam.cy) * proj.depth / cam.fy;
            let lateral = ((x - p.x).powi(2) + (y - p.y).powi(2)).sqrt();
            let one_pixel = proj.depth * (1.0 / cam.fx).max(1.0 / cam.fy);
            assert!(lateral <= one_pixel, "lateral {lateral} > {one_pixel}");
        }
    }

    #[test]
    fn extrinsics_matrix_round_trip_and_validation() {
        let rot = RotMatrix::from_axis_angle(&Vector3::new(0.1, 1.0, -0.2), 0.8);
        let ext = CameraExtrinsics::new(rot, Vector3::new(0.05, -0.02, 0.3));
        let back = CameraExtrinsics::from_matrix(&ext.to_matrix()).unwrap();
        assert!((back.to_matrix() - ext.to_matrix()).norm() < 1e-12);

        let mut bad = ext.to_matrix();
        bad[(3, 3)] = 2.0;
        assert!(CameraExtrinsics::from_matrix(&bad).is_err());
        let mut bad_rot = ext.to_matrix();
        bad_rot[(0, 0)] = 3.0;
        assert!(CameraExtrinsics::from_matrix(&bad_rot).is_err());
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 0.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 3.0, 3.0, 4, 4).is_ok());
    }

    #[test]
    fn depth_map_save_load_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(53);
        let pts: Vec<Vector4<f64>> = (0..200)
            .map(|_| {
                Vector4::new(
                    (rng.random::<f64>() - 0.5) * 0.5,
                    (rng.random::<f64>() - 0.5) * 0.5,
                    0.2 + rng.random::<f64>(),
                    1.0,
                )
            })
            .collect();
        let map = render_depth(&test_camera(), &CameraExtrinsics::identity(), &[&pts]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame.dpth");
        map.save(&path).unwrap();
        let loaded = DepthMap::load(&path).unwrap();
        assert_eq!(map, loaded);
    }

    #[test]
    fn depth_map_load_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("garbage.dpth");
        std::fs::write(&path, b"not a depth map").unwrap();
        assert!(matches!(DepthMap::load(&path), Err(RenderError::BadMagic)));
        let path2 = dir.path().join("trunc.dpth");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(DEPTH_MAGIC);
        bytes.extend_from_slice(&DEPTH_VERSION.to_le_bytes());
        bytes.extend_from_slice(&8u32.to_le_bytes());
        bytes.extend_from_slice(&8u32.to_le_bytes());
        std::fs::write(&path2, bytes).unwrap();
        assert!(matches!(DepthMap::load(&path2), Err(RenderError::Truncated)));
    }
}
