//! Pinhole cameras stored as the 25-number pose used for conditioning.
//!
//! Convention: world-to-camera extrinsic, camera looks down +z with x right
//! and y down. Intrinsics are normalized so that `(fx * x / z + cx)` lands in
//! `[0, 1]` across the image width (likewise for y and height). Pixel centers
//! sit at half-integer coordinates.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};

pub const NEAR_PLANE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct CameraPose {
    /// Row-major 4x4 world-to-camera matrix.
    pub extrinsic: [f64; 16],
    /// Row-major 3x3 normalized intrinsic matrix.
    pub intrinsic: [f64; 9],
}

impl CameraPose {
    pub fn new(extrinsic: [f64; 16], intrinsic: [f64; 9]) -> Result<Self> {
        let cam = Self {
            extrinsic,
            intrinsic,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn from_parts(rotation: &Mat3, translation: &Vec3, focal: (f64, f64), principal: (f64, f64)) -> Self {
        let mut extrinsic = [0.0; 16];
        for i in 0..3 {
            for j in 0..3 {
                extrinsic[i * 4 + j] = rotation[(i, j)];
            }
            extrinsic[i * 4 + 3] = translation[i];
        }
        extrinsic[15] = 1.0;
        let intrinsic = [focal.0, 0.0, principal.0, 0.0, focal.1, principal.1, 0.0, 0.0, 1.0];
        Self {
            extrinsic,
            intrinsic,
        }
    }

    /// Camera at `eye` looking at `target`; `up` is the world up direction.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, focal: f64) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        // y points down in image space.
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::from_parts(&rotation, &translation, (focal, focal), (0.5, 0.5))
    }

    /// Orbit camera around the origin. Yaw 0 looks at the +z side of the
    /// head (the face); positive pitch raises the camera.
    pub fn orbit(yaw_deg: f64, pitch_deg: f64, radius: f64, focal: f64) -> Self {
        let (yaw, pitch) = (yaw_deg.to_radians(), pitch_deg.to_radians());
        let eye = Vector3::new(
            radius * pitch.cos() * yaw.sin(),
            radius * pitch.sin(),
            radius * pitch.cos() * yaw.cos(),
        );
        Self::look_at(eye, Vec3::zeros(), Vec3::y(), focal)
    }

    pub fn validate(&self) -> Result<()> {
        if self.extrinsic.iter().chain(&self.intrinsic).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("camera pose has non-finite entries".into()));
        }
        let r = self.rotation();
        if (r.transpose() * r - Mat3::identity()).abs().max() > 1e-5 || (r.determinant() - 1.0).abs() > 1e-5 {
            return Err(Error::Config("camera extrinsic block is not a rotation".into()));
        }
        let k = &self.intrinsic;
        if k[0] <= 0.0 || k[4] <= 0.0 {
            return Err(Error::Config("camera focal lengths must be positive".into()));
        }
        if k[1] != 0.0 {
            return Err(Error::Config("camera intrinsic must have zero skew".into()));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Mat3 {
        let e = &self.extrinsic;
        Mat3::new(e[0], e[1], e[2], e[4], e[5], e[6], e[8], e[9], e[10])
    }

    pub fn translation(&self) -> Vec3 {
        Vec3::new(self.extrinsic[3], self.extrinsic[7], self.extrinsic[11])
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation().transpose() * self.translation())
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation() * p + self.translation()
    }

    /// Focal lengths in pixels for an image of the given size.
    pub fn focal_px(&self, width: usize, height: usize) -> (f64, f64) {
        (self.intrinsic[0] * width as f64, self.intrinsic[4] * height as f64)
    }

    pub fn principal_px(&self, width: usize, height: usize) -> (f64, f64) {
        (self.intrinsic[2] * width as f64, self.intrinsic[5] * height as f64)
    }

    /// Projects a camera-space point to pixel coordinates.
    pub fn project_camera_point(&self, t: &Vec3, width: usize, height: usize) -> (f64, f64) {
        let (fx, fy) = self.focal_px(width, height);
        let (cx, cy) = self.principal_px(width, height);
        (fx * t.x / t.z + cx, fy * t.y / t.z + cy)
    }

    /// The 25 conditioning values: extrinsic then intrinsic.
    pub fn to_vec25(&self) -> [f64; 25] {
        let mut out = [0.0; 25];
        out[..16].copy_from_slice(&self.extrinsic);
        out[16..].copy_from_slice(&self.intrinsic);
        out
    }

    pub fn from_slice25(values: &[f64]) -> Result<Self> {
        if values.len() != 25 {
            return Err(Error::Shape(format!("camera pose needs 25 values, got {}", values.len())));
        }
        let mut extrinsic = [0.0; 16];
        let mut intrinsic = [0.0; 9];
        extrinsic.copy_from_slice(&values[..16]);
        intrinsic.copy_from_slice(&values[16..]);
        Self::new(extrinsic, intrinsic)
    }
}

/// A ring of orbit cameras at evenly spaced yaw angles.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRing {
    pub count: usize,
    pub radius: f64,
    pub yaw_start_deg: f64,
    pub yaw_span_deg: f64,
    pub pitch_deg: f64,
    pub focal: f64,
}

impl CameraRing {
    pub fn yaws(&self) -> Vec<f64> {
        (0..self.count)
            .map(|i| self.yaw_start_deg + self.yaw_span_deg * i as f64 / self.count as f64)
            .collect()
    }

    pub fn cameras(&self) -> Vec<CameraPose> {
        self.yaws()
            .into_iter()
            .map(|yaw| CameraPose::orbit(yaw, self.pitch_deg, self.radius, self.focal))
            .collect()
    }
}
