use nalgebra::{Cholesky, DMatrix, Dyn};

use super::operator::GradientOperator;
use crate::error::{ensure_finite, Error, Result};
use crate::math::{Mat3, Vec3};
use crate::mesh::TemplateMesh;

/// Per-face target Jacobians plus a global translation.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianField {
    pub jacobians: Vec<Mat3>,
    pub translation: Vec3,
}

impl JacobianField {
    pub fn identity(faces: usize) -> Self {
        Self {
            jacobians: vec![Mat3::identity(); faces],
            translation: Vec3::zeros(),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.jacobians.iter().flat_map(|j| j.transpose().as_slice().to_vec()).collect();
        out.extend(self.translation.iter());
        out
    }

    pub fn from_flat(flat: &[f64], faces: usize) -> Result<Self> {
        if flat.len() != 9 * faces + 3 {
            return Err(Error::Shape(format!("{} values for a {faces}-face field", flat.len())));
        }
        let jacobians = flat[..9 * faces]
            .chunks_exact(9)
            .map(|c| Mat3::from_row_slice(c))
            .collect();
        Ok(Self {
            jacobians,
            translation: Vec3::from_column_slice(&flat[9 * faces..]),
        })
    }
}

/// Least-squares vertex recovery from a Jacobian field.
///
/// Minimizes `Σ_f A_f ‖L_f(V) − J_f P_f‖²`, with `P_f` the rest tangent
/// projector, then recenters the result to the origin and adds the field's
/// translation. The area-weighted Laplacian is factored once; the solve is
/// linear in `(J, t)`.
#[derive(Debug, Clone)]
pub struct PoissonSolver {
    pub op: GradientOperator,
    projectors: Vec<Mat3>,
    chol: Cholesky<f64, Dyn>,
}

fn component_count(vertex_count: usize, faces: &[[usize; 3]]) -> usize {
    let mut parent: Vec<usize> = (0..vertex_count).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for f in faces {
        for k in 1..3 {
            let (a, b) = (find(&mut parent, f[0]), find(&mut parent, f[k]));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    (0..vertex_count).filter(|&i| find(&mut parent, i) == i).count()
}

impl PoissonSolver {
    pub fn new(rest: &TemplateMesh) -> Result<Self> {
        let op = super::mesh_gradient_operator(rest)?;
        Self::from_operator(op)
    }

    pub fn from_operator(op: GradientOperator) -> Result<Self> {
        let n = op.vertex_count;
        if n < 3 {
            return Err(Error::Config("mesh needs at least three vertices".into()));
        }
        let parts = component_count(n, &op.faces);
        if parts != 1 {
            return Err(Error::Config(format!("mesh has {parts} connected components; the Poisson system is singular")));
        }
        // vertex 0 is pinned; the remaining unknowns are shifted down by one
        let mut k = DMatrix::<f64>::zeros(n - 1, n - 1);
        for (fi, f) in op.faces.iter().enumerate() {
            let g = &op.corner_grads[fi];
            for a in 0..3 {
                for b in 0..3 {
                    if f[a] == 0 || f[b] == 0 {
                        continue;
                    }
                    k[(f[a] - 1, f[b] - 1)] += op.areas[fi] * g[a].dot(&g[b]);
                }
            }
        }
        let chol = Cholesky::new(k).ok_or_else(|| Error::Config("Poisson system is not positive definite".into()))?;
        let projectors = (0..op.face_count()).map(|f| op.projector(f)).collect();
        Ok(Self { op, projectors, chol })
    }

    pub fn vertex_count(&self) -> usize {
        self.op.vertex_count
    }

    pub fn face_count(&self) -> usize {
        self.op.face_count()
    }

    fn check(&self, field: &JacobianField) -> Result<()> {
        if field.jacobians.len() != self.face_count() {
            return Err(Error::Shape(format!("{} jacobians for {} faces", field.jacobians.len(), self.face_count())));
        }
        for j in &field.jacobians {
            ensure_finite(j.as_slice(), "jacobian")?;
        }
        ensure_finite(field.translation.as_slice(), "translation")
    }

    /// Vertex positions for `field`, centroid at `field.translation`.
    pub fn solve(&self, field: &JacobianField) -> Result<Vec<Vec3>> {
        self.check(field)?;
        let n = self.vertex_count();
        let mut rhs = DMatrix::<f64>::zeros(n - 1, 3);
        for (fi, f) in self.op.faces.iter().enumerate() {
            let target = field.jacobians[fi] * self.projectors[fi] * self.op.areas[fi];
            for c in 0..3 {
                if f[c] == 0 {
                    continue;
                }
                let r = target * self.op.corner_grads[fi][c];
                for d in 0..3 {
                    rhs[(f[c] - 1, d)] += r[d];
                }
            }
        }
        let x = self.chol.solve(&rhs);
        let mut out = Vec::with_capacity(n);
        out.push(Vec3::zeros());
        out.extend((0..n - 1).map(|i| Vec3::new(x[(i, 0)], x[(i, 1)], x[(i, 2)])));
        let shift = field.translation - out.iter().sum::<Vec3>() / n as f64;
        for v in &mut out {
            *v += shift;
        }
        Ok(out)
    }

    /// Adjoint of [`solve`](Self::solve): maps a vertex gradient to
    /// gradients on the Jacobians and the translation.
    pub fn solve_backward(&self, d_vertices: &[Vec3]) -> Result<(Vec<Mat3>, Vec3)> {
        let n = self.vertex_count();
        if d_vertices.len() != n {
            return Err(Error::Shape(format!("{} vertex gradients for {n} vertices", d_vertices.len())));
        }
        let d_t: Vec3 = d_vertices.iter().sum();
        let mean = d_t / n as f64;
        let mut rhs = DMatrix::<f64>::zeros(n - 1, 3);
        for i in 1..n {
            let g = d_vertices[i] - mean;
            for d in 0..3 {
                rhs[(i - 1, d)] = g[d];
            }
        }
        let y = self.chol.solve(&rhs);
        let y_at = |v: usize| if v == 0 { Vec3::zeros() } else { Vec3::new(y[(v - 1, 0)], y[(v - 1, 1)], y[(v - 1, 2)]) };
        let d_j = self
            .op
            .faces
            .iter()
            .enumerate()
            .map(|(fi, f)| {
                let m: Mat3 = (0..3).map(|c| y_at(f[c]) * self.op.corner_grads[fi][c].transpose()).sum();
                m * self.projectors[fi] * self.op.areas[fi]
            })
            .collect();
        Ok((d_j, d_t))
    }

    /// The least-squares objective of `vertices` against `field`.
    pub fn objective(&self, field: &JacobianField, vertices: &[Vec3]) -> Result<f64> {
        self.check(field)?;
        let l = self.op.apply_linear(vertices)?;
        Ok(l.iter()
            .enumerate()
            .map(|(fi, lf)| self.op.areas[fi] * (lf - field.jacobians[fi] * self.projectors[fi]).norm_squared())
            .sum())
    }
}
