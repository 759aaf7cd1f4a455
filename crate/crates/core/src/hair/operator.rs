use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};
use crate::mesh::TemplateMesh;

/// Per-face deformation gradients of a rest mesh.
///
/// For face `f` with rest edges `e1, e2` and unit normal `n`, the gradient of
/// a configuration `V'` is `[e1' e2' n'] [e1 e2 n]⁻¹`, where `n'` is the
/// deformed normal scaled by `sqrt(|e1' × e2'| / |e1 × e2|)`. The first two
/// columns contribute a linear map `L_f(V') = Σ_c v'_c g_cᵀ`; its corner
/// vectors `g_c` are the discrete surface gradients of the hat functions.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientOperator {
    pub faces: Vec<[usize; 3]>,
    pub vertex_count: usize,
    /// Corner gradient vectors `g_c` per face.
    pub corner_grads: Vec<[Vec3; 3]>,
    /// Rest unit normals.
    pub normals: Vec<Vec3>,
    /// Rest face areas, used as least-squares weights.
    pub areas: Vec<f64>,
}

/// Builds the gradient operator of `rest`.
pub fn mesh_gradient_operator(rest: &TemplateMesh) -> Result<GradientOperator> {
    GradientOperator::new(&rest.vertices, &rest.faces)
}

impl GradientOperator {
    pub fn new(vertices: &[Vec3], faces: &[[usize; 3]]) -> Result<Self> {
        let mut corner_grads = Vec::with_capacity(faces.len());
        let mut normals = Vec::with_capacity(faces.len());
        let mut areas = Vec::with_capacity(faces.len());
        for (fi, f) in faces.iter().enumerate() {
            if f.iter().any(|&i| i >= vertices.len()) {
                return Err(Error::Shape(format!("face {fi} references a missing vertex")));
            }
            let e1 = vertices[f[1]] - vertices[f[0]];
            let e2 = vertices[f[2]] - vertices[f[0]];
            let c = e1.cross(&e2);
            let area = 0.5 * c.norm();
            if !(area > 1e-12) {
                return Err(Error::Config(format!("face {fi} has zero area in the rest pose")));
            }
            let n = c / c.norm();
            let frame = Mat3::from_columns(&[e1, e2, n]);
            let inv = frame
                .try_inverse()
                .ok_or_else(|| Error::Config(format!("face {fi} has a singular edge frame")))?;
            let m1 = inv.row(0).transpose();
            let m2 = inv.row(1).transpose();
            corner_grads.push([-m1 - m2, m1, m2]);
            normals.push(n);
            areas.push(area);
        }
        Ok(Self {
            faces: faces.to_vec(),
            vertex_count: vertices.len(),
            corner_grads,
            normals,
            areas,
        })
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    fn check(&self, vertices: &[Vec3]) -> Result<()> {
        if vertices.len() != self.vertex_count {
            return Err(Error::Shape(format!("{} vertices, operator expects {}", vertices.len(), self.vertex_count)));
        }
        Ok(())
    }

    /// Tangential part `L_f(V')` of every face gradient; linear in `V'`.
    pub fn apply_linear(&self, vertices: &[Vec3]) -> Result<Vec<Mat3>> {
        self.check(vertices)?;
        Ok(self
            .faces
            .iter()
            .zip(&self.corner_grads)
            .map(|(f, g)| (0..3).map(|c| vertices[f[c]] * g[c].transpose()).sum())
            .collect())
    }

    /// Full deformation gradients, including the scaled normal column.
    pub fn apply(&self, vertices: &[Vec3]) -> Result<Vec<Mat3>> {
        let mut out = self.apply_linear(vertices)?;
        for (fi, f) in self.faces.iter().enumerate() {
            let c = (vertices[f[1]] - vertices[f[0]]).cross(&(vertices[f[2]] - vertices[f[0]]));
            let rest = 2.0 * self.areas[fi];
            let scaled = if c.norm() > 0.0 { c / (c.norm() * rest).sqrt() } else { Vec3::zeros() };
            out[fi] += scaled * self.normals[fi].transpose();
        }
        Ok(out)
    }

    /// Tangent-plane projector `I - n nᵀ` of a face.
    pub fn projector(&self, f: usize) -> Mat3 {
        Mat3::identity() - self.normals[f] * self.normals[f].transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{normalize_quat, quat_to_rotation};
    use crate::mesh::face_mesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: &Mat3, b: &Mat3, tol: f64) -> bool {
        (a - b).abs().max() <= tol
    }

    #[test]
    fn rest_pose_gives_identity() {
        let m = face_mesh(6, 12);
        let op = mesh_gradient_operator(&m).unwrap();
        for g in op.apply(&m.vertices).unwrap() {
            assert!(close(&g, &Mat3::identity(), 1e-10));
        }
    }

    #[test]
    fn rotation_and_scale_are_reproduced() {
        let m = face_mesh(6, 12);
        let op = mesh_gradient_operator(&m).unwrap();
        let r = quat_to_rotation(normalize_quat([0.8, 0.3, -0.4, 0.2]));
        let rotated: Vec<Vec3> = m.vertices.iter().map(|v| r * v + Vec3::new(4.0, -2.0, 1.0)).collect();
        for g in op.apply(&rotated).unwrap() {
            assert!(close(&g, &r, 1e-9));
        }
        let scaled: Vec<Vec3> = m.vertices.iter().map(|v| v * 1.7).collect();
        for g in op.apply(&scaled).unwrap() {
            assert!(close(&g, &(Mat3::identity() * 1.7), 1e-9));
        }
    }

    #[test]
    fn matches_per_face_frame_solve() {
        let m = face_mesh(5, 10);
        let op = mesh_gradient_operator(&m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let moved: Vec<Vec3> = m
            .vertices
            .iter()
            .map(|v| v + Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
            .collect();
        let gs = op.apply(&moved).unwrap();
        for (fi, f) in m.faces.iter().enumerate() {
            // independent oracle: solve G [e1 e2 n] = [e1' e2' n'] for G
            let rest = |vs: &[Vec3]| (vs[f[1]] - vs[f[0]], vs[f[2]] - vs[f[0]]);
            let (e1, e2) = rest(&m.vertices);
            let (d1, d2) = rest(&moved);
            let c = e1.cross(&e2);
            let cd = d1.cross(&d2);
            let n = c.normalize();
            let nd = cd / (cd.norm() * c.norm()).sqrt();
            let src = Mat3::from_columns(&[e1, e2, n]);
            let dst = Mat3::from_columns(&[d1, d2, nd]);
            let g = src.transpose().lu().solve(&dst.transpose()).unwrap().transpose();
            assert!(close(&gs[fi], &g, 1e-8), "face {fi}");
        }
    }

    #[test]
    fn zero_area_face_is_rejected() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0];
        assert!(matches!(GradientOperator::new(&v, &[[0, 1, 2]]), Err(Error::Config(_))));
    }
}
