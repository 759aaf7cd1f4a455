use crate::camera::{CameraPose, NEAR_PLANE};
use crate::math::{normalize_quat, normalize_quat_backward, quat_to_rotation, quat_to_rotation_backward, Mat3, Vec3};
use crate::scene::GaussianPrimitive;

use super::{COV_DILATION, MAX_MAHALANOBIS};

/// A Gaussian projected to the image plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    /// Index of the source Gaussian in its set.
    pub index: usize,
    /// Pixel coordinates of the projected center.
    pub mean: [f64; 2],
    /// Dilated 2D covariance `(xx, xy, yy)`.
    pub cov: [f64; 3],
    /// Inverse of `cov`, `(xx, xy, yy)`.
    pub conic: [f64; 3],
    /// Camera-space z.
    pub depth: f64,
    pub color: [f64; 3],
    pub label: [f64; 3],
    pub opacity: f64,
    /// Inclusive pixel bounds `[x0, x1] x [y0, y1]` of the truncated footprint.
    pub bounds: [i64; 4],
}

impl Splat2D {
    pub fn intersects_image(&self, width: usize, height: usize) -> bool {
        let [x0, x1, y0, y1] = self.bounds;
        x1 >= 0 && y1 >= 0 && x0 < width as i64 && y0 < height as i64 && x0 <= x1 && y0 <= y1
    }
}

struct Geometry {
    t: Vec3,
    rot: Mat3,
    jac: [[f64; 3]; 2],
    cov_cam: Mat3,
    cov2d: [f64; 3],
}

fn geometry(g: &GaussianPrimitive, camera: &CameraPose, width: usize, height: usize) -> Option<Geometry> {
    let w = camera.rotation();
    let t = w * g.position + camera.translation();
    if t.z <= NEAR_PLANE {
        return None;
    }
    let (fx, fy) = camera.focal_px(width, height);
    let rot = quat_to_rotation(normalize_quat(g.rotation));
    let m = rot * Mat3::from_diagonal(&g.scale);
    let cov_cam = w * (m * m.transpose()) * w.transpose();
    let jac = [
        [fx / t.z, 0.0, -fx * t.x / (t.z * t.z)],
        [0.0, fy / t.z, -fy * t.y / (t.z * t.z)],
    ];
    let mut c = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += jac[a][i] * cov_cam[(i, j)] * jac[b][j];
                }
            }
            c[a][b] = s;
        }
    }
    let cov2d = [c[0][0] + COV_DILATION, 0.5 * (c[0][1] + c[1][0]), c[1][1] + COV_DILATION];
    Some(Geometry {
        t,
        rot,
        jac,
        cov_cam,
        cov2d,
    })
}

pub(crate) fn project_unculled(
    g: &GaussianPrimitive,
    index: usize,
    camera: &CameraPose,
    width: usize,
    height: usize,
) -> Option<Splat2D> {
    let geo = geometry(g, camera, width, height)?;
    let (u, v) = camera.project_camera_point(&geo.t, width, height);
    let [a, b, c] = geo.cov2d;
    let det = a * c - b * b;
    if !(det > 0.0) {
        return None;
    }
    let conic = [c / det, -b / det, a / det];
    // pixel centers sit at +0.5; the footprint is the ellipse q < MAX_MAHALANOBIS
    let rx = (MAX_MAHALANOBIS * a).sqrt();
    let ry = (MAX_MAHALANOBIS * c).sqrt();
    let bounds = [
        (u - rx - 0.5).floor() as i64 - 1,
        (u + rx - 0.5).ceil() as i64 + 1,
        (v - ry - 0.5).floor() as i64 - 1,
        (v + ry - 0.5).ceil() as i64 + 1,
    ];
    Some(Splat2D {
        index,
        mean: [u, v],
        cov: geo.cov2d,
        conic,
        depth: geo.t.z,
        color: g.color,
        label: g.label.one_hot(),
        opacity: g.opacity,
        bounds,
    })
}

/// Projects one Gaussian; `None` means culled (behind the near plane or a
/// footprint that misses the image).
pub fn project_gaussian(g: &GaussianPrimitive, camera: &CameraPose, width: usize, height: usize) -> Option<Splat2D> {
    project_unculled(g, 0, camera, width, height).filter(|s| s.intersects_image(width, height))
}

/// Gradients of one projected splat, accumulated over pixels.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SplatGrad {
    pub mean: [f64; 2],
    /// Gradient w.r.t. the full 2x2 conic matrix (both off-diagonals).
    pub conic: [[f64; 2]; 2],
    pub opacity: f64,
    pub color: [f64; 3],
    pub label: [f64; 3],
}

impl SplatGrad {
    pub fn add(&mut self, o: &SplatGrad) {
        for k in 0..2 {
            self.mean[k] += o.mean[k];
            for l in 0..2 {
                self.conic[k][l] += o.conic[k][l];
            }
        }
        self.opacity += o.opacity;
        for k in 0..3 {
            self.color[k] += o.color[k];
            self.label[k] += o.label[k];
        }
    }
}

/// 3D parameter gradients of one Gaussian.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PrimitiveGrad {
    pub position: Vec3,
    pub rotation: [f64; 4],
    pub scale: Vec3,
}

/// Chains splat-space gradients back to position, rotation, and scale.
pub fn project_gaussian_backward(
    g: &GaussianPrimitive,
    camera: &CameraPose,
    width: usize,
    height: usize,
    d: &SplatGrad,
) -> PrimitiveGrad {
    let Some(geo) = geometry(g, camera, width, height) else {
        return PrimitiveGrad::default();
    };
    let [a, b, c] = geo.cov2d;
    let det = a * c - b * b;
    let k = [[c / det, -b / det], [-b / det, a / det]];
    // dΣ2d = -K dK K
    let mut d_cov = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let mut s = 0.0;
            for p in 0..2 {
                for q in 0..2 {
                    s -= k[i][p] * d.conic[p][q] * k[q][j];
                }
            }
            d_cov[i][j] = s;
        }
    }
    let jac = geo.jac;
    // dΣcam = Jᵀ dΣ2d J
    let mut d_cov_cam = Mat3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let mut s = 0.0;
            for p in 0..2 {
                for q in 0..2 {
                    s += jac[p][i] * d_cov[p][q] * jac[q][j];
                }
            }
            d_cov_cam[(i, j)] = s;
        }
    }
    // dJ = dΣ2d J Σcamᵀ + dΣ2dᵀ J Σcam
    let mut d_jac = [[0.0; 3]; 2];
    for p in 0..2 {
        for i in 0..3 {
            let mut s = 0.0;
            for q in 0..2 {
                for j in 0..3 {
                    s += d_cov[p][q] * jac[q][j] * geo.cov_cam[(i, j)] + d_cov[q][p] * jac[q][j] * geo.cov_cam[(j, i)];
                }
            }
            d_jac[p][i] = s;
        }
    }
    let w = camera.rotation();
    let d_sigma = w.transpose() * d_cov_cam * w;
    let m = geo.rot * Mat3::from_diagonal(&g.scale);
    let d_m = (d_sigma + d_sigma.transpose()) * m;
    let mut d_rot = Mat3::zeros();
    let mut d_scale = Vec3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            d_rot[(i, j)] = d_m[(i, j)] * g.scale[j];
            d_scale[j] += d_m[(i, j)] * geo.rot[(i, j)];
        }
    }
    let unit = normalize_quat(g.rotation);
    let d_unit = quat_to_rotation_backward(unit, &d_rot);
    let d_quat = normalize_quat_backward(g.rotation, d_unit);

    let (fx, fy) = camera.focal_px(width, height);
    let t = geo.t;
    let (tz2, tz3) = (t.z * t.z, t.z * t.z * t.z);
    let mut d_t = Vec3::new(
        d.mean[0] * fx / t.z,
        d.mean[1] * fy / t.z,
        -d.mean[0] * fx * t.x / tz2 - d.mean[1] * fy * t.y / tz2,
    );
    d_t.x += d_jac[0][2] * (-fx / tz2);
    d_t.y += d_jac[1][2] * (-fy / tz2);
    d_t.z += d_jac[0][0] * (-fx / tz2)
        + d_jac[0][2] * (2.0 * fx * t.x / tz3)
        + d_jac[1][1] * (-fy / tz2)
        + d_jac[1][2] * (2.0 * fy * t.y / tz3);
    PrimitiveGrad {
        position: w.transpose() * d_t,
        rotation: d_quat,
        scale: d_scale,
    }
}
