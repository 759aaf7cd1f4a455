use std::path::Path;

use nalgebra::DMatrix;

use crate::container::{ContainerReader, ContainerWriter, PayloadKind};
use crate::error::{ensure_finite, Error, Result};
use crate::math::Vec3;
use crate::mesh::TemplateMesh;

/// Standard number of blend-shape coefficients.
pub const NUM_COEFFS: usize = 32;

/// Linear hair shape model `M(θ) = M̄ + σ Xᵀ θ` over flattened positions.
#[derive(Debug, Clone, PartialEq)]
pub struct HairBlendModel {
    /// `3V` mean positions, `x0 y0 z0 x1 ...`.
    pub mean: Vec<f64>,
    pub sigma: f64,
    /// `k x 3V` row-major principal directions; rows past `rank` are zero.
    pub components: Vec<f64>,
    pub num_coeffs: usize,
    /// Number of nonzero component rows.
    pub rank: usize,
    /// Topology and layout shared by every blended shape.
    pub template: TemplateMesh,
}

impl HairBlendModel {
    pub fn vertex_count(&self) -> usize {
        self.mean.len() / 3
    }

    pub fn component(&self, n: usize) -> &[f64] {
        let d = self.mean.len();
        &self.components[n * d..(n + 1) * d]
    }

    /// The blended shape as a mesh.
    pub fn mesh(&self, theta: &[f64]) -> Result<TemplateMesh> {
        let v = blend_hair_shape(self, theta)?;
        self.template.with_vertices(v)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let t = &self.template;
        let mut w = ContainerWriter::new(PayloadKind::BlendModel);
        w.u32(self.vertex_count() as u32);
        w.u32(t.faces.len() as u32);
        w.u32(self.num_coeffs as u32);
        w.f32(self.sigma);
        w.u32(self.rank as u32);
        w.f32s(&self.mean);
        w.f32s(&self.components);
        for f in &t.faces {
            for &i in f {
                w.u32(i as u32);
            }
        }
        let uvs: Vec<f64> = if t.uvs.is_empty() {
            vec![0.0; 6 * t.faces.len()]
        } else {
            t.uvs.iter().flat_map(|c| c.iter().flatten().copied()).collect()
        };
        w.f32s(&uvs);
        w.f32s(&t.labels);
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ContainerReader::open(buf, PayloadKind::BlendModel)?;
        let v = r.u32()? as usize;
        let f = r.u32()? as usize;
        let k = r.u32()? as usize;
        let sigma = r.f32()?;
        let rank = r.u32()? as usize;
        let mean = r.f32s(3 * v)?;
        let components = r.f32s(k * 3 * v)?;
        let mut faces = Vec::with_capacity(f);
        for _ in 0..f {
            faces.push([r.u32()? as usize, r.u32()? as usize, r.u32()? as usize]);
        }
        let uv_flat = r.f32s(6 * f)?;
        let labels = r.f32s(v)?;
        if !r.is_done() {
            return Err(Error::Data("trailing bytes after blend model".into()));
        }
        let uvs = uv_flat
            .chunks_exact(6)
            .map(|c| [[c[0], c[1]], [c[2], c[3]], [c[4], c[5]]])
            .collect();
        let template = TemplateMesh {
            vertices: TemplateMesh::positions_from_flat(&mean),
            faces,
            uvs,
            labels,
        };
        template.validate()?;
        if !(sigma > 0.0) || rank > k {
            return Err(Error::Data("blend model header is inconsistent".into()));
        }
        Ok(Self {
            mean,
            sigma,
            components,
            num_coeffs: k,
            rank,
            template,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

/// PCA over registered meshes: global mean, a single global standard
/// deviation `σ`, and the top right singular vectors of the centered,
/// `σ`-normalized stack. Each component's sign is fixed so that its
/// largest-magnitude entry is positive.
pub fn build_blend_model(meshes: &[TemplateMesh], num_coeffs: usize) -> Result<HairBlendModel> {
    if meshes.len() < 2 {
        return Err(Error::Config("a blend model needs at least two meshes".into()));
    }
    if num_coeffs == 0 {
        return Err(Error::Config("num_coeffs must be at least 1".into()));
    }
    let first = &meshes[0];
    for (i, m) in meshes.iter().enumerate() {
        if m.vertices.len() != first.vertices.len() || m.faces != first.faces {
            return Err(Error::Shape(format!("mesh {i} does not share the topology of mesh 0")));
        }
    }
    let n = meshes.len();
    let d = 3 * first.vertices.len();
    let stack = DMatrix::from_fn(n, d, |i, j| meshes[i].vertices[j / 3][j % 3]);
    ensure_finite(stack.as_slice(), "mesh stack")?;
    let mean: Vec<f64> = (0..d).map(|j| stack.column(j).mean()).collect();
    let mut centered = stack;
    for j in 0..d {
        for i in 0..n {
            centered[(i, j)] -= mean[j];
        }
    }
    let sigma = (centered.iter().map(|v| v * v).sum::<f64>() / (n * d) as f64).sqrt();
    if !(sigma > 0.0) {
        return Err(Error::Config("all meshes are identical; sigma is zero".into()));
    }
    centered /= sigma;
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Numeric("SVD did not converge".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let s_max = svd.singular_values.max();
    let tol = s_max * 1e-9 * (n.max(d) as f64);
    let mut components = vec![0.0; num_coeffs * d];
    let mut rank = 0;
    for (slot, &src) in order.iter().take(num_coeffs).enumerate() {
        if svd.singular_values[src] <= tol {
            break;
        }
        let row: Vec<f64> = v_t.row(src).iter().copied().collect();
        let pivot = row.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for (dst, v) in components[slot * d..(slot + 1) * d].iter_mut().zip(&row) {
            *dst = sign * v;
        }
        rank += 1;
    }
    let mut template = first.clone();
    template.vertices = TemplateMesh::positions_from_flat(&mean);
    Ok(HairBlendModel {
        mean,
        sigma,
        components,
        num_coeffs,
        rank,
        template,
    })
}

/// Evaluates `M̄ + σ Σ θ_n X_n`.
pub fn blend_hair_shape(model: &HairBlendModel, theta: &[f64]) -> Result<Vec<Vec3>> {
    if theta.len() != model.num_coeffs {
        return Err(Error::Shape(format!("theta has {} entries, model expects {}", theta.len(), model.num_coeffs)));
    }
    ensure_finite(theta, "theta")?;
    let mut flat = model.mean.clone();
    for (n, &t) in theta.iter().enumerate() {
        if t == 0.0 {
            continue;
        }
        let s = model.sigma * t;
        for (f, x) in flat.iter_mut().zip(model.component(n)) {
            *f += s * x;
        }
    }
    Ok(TemplateMesh::positions_from_flat(&flat))
}

/// Gradient w.r.t. `θ` of a loss with vertex gradient `d_vertices`: `σ X dV`.
pub fn blend_hair_shape_backward(model: &HairBlendModel, d_vertices: &[Vec3]) -> Result<Vec<f64>> {
    if d_vertices.len() != model.vertex_count() {
        return Err(Error::Shape(format!("{} vertex gradients for {} vertices", d_vertices.len(), model.vertex_count())));
    }
    Ok((0..model.num_coeffs)
        .map(|n| {
            let x = model.component(n);
            model.sigma * d_vertices.iter().enumerate().map(|(i, g)| g.x * x[3 * i] + g.y * x[3 * i + 1] + g.z * x[3 * i + 2]).sum::<f64>()
        })
        .collect())
}

/// Coefficients of the orthogonal projection of `vertices` onto the model.
pub fn project_onto_model(model: &HairBlendModel, vertices: &[Vec3]) -> Result<Vec<f64>> {
    if vertices.len() != model.vertex_count() {
        return Err(Error::Shape(format!("{} vertices, model has {}", vertices.len(), model.vertex_count())));
    }
    let diff: Vec<Vec3> = vertices
        .iter()
        .enumerate()
        .map(|(i, v)| (v - Vec3::new(model.mean[3 * i], model.mean[3 * i + 1], model.mean[3 * i + 2])) / (model.sigma * model.sigma))
        .collect();
    blend_hair_shape_backward(model, &diff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{hair_mesh, HairStyle};
    use proptest::prelude::*;

    fn family(n: usize) -> Vec<TemplateMesh> {
        (0..n)
            .map(|i| {
                let t = i as f64 / n as f64;
                hair_mesh(
                    6,
                    12,
                    &HairStyle {
                        length: 0.3 * (t * 7.1).sin(),
                        flare: 0.2 * (t * 3.3).cos(),
                        volume: 0.1 * t - 0.05 * t * t,
                        back_length: 0.4 * (t * 5.0).sin() * t,
                    },
                )
            })
            .collect()
    }

    fn rms_error(a: &[Vec3], b: &[Vec3]) -> f64 {
        (a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum::<f64>() / a.len() as f64).sqrt()
    }

    #[test]
    fn two_meshes_give_one_component() {
        let ms = family(2);
        let m = build_blend_model(&ms, 4).unwrap();
        assert_eq!(m.rank, 1);
        let avg: Vec<Vec3> = ms[0].vertices.iter().zip(&ms[1].vertices).map(|(a, b)| (a + b) / 2.0).collect();
        assert!(rms_error(&blend_hair_shape(&m, &[0.0; 4]).unwrap(), &avg) < 1e-12);
        assert!(m.components[m.mean.len()..].iter().all(|&v| v == 0.0));
        // the component is parallel to the difference
        let diff: Vec<f64> = ms[1].flat_positions().iter().zip(ms[0].flat_positions()).map(|(a, b)| a - b).collect();
        let norm = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        let dot: f64 = diff.iter().zip(m.component(0)).map(|(a, b)| a * b).sum();
        assert!((dot.abs() / norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn full_rank_round_trip_and_orthonormal_rows() {
        let ms = family(10);
        let m = build_blend_model(&ms, 9).unwrap();
        assert_eq!(m.rank, 9);
        for a in 0..9 {
            for b in 0..9 {
                let dot: f64 = m.component(a).iter().zip(m.component(b)).map(|(x, y)| x * y).sum();
                assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-6);
            }
        }
        for mesh in &ms {
            let theta = project_onto_model(&m, &mesh.vertices).unwrap();
            let rec = blend_hair_shape(&m, &theta).unwrap();
            assert!(rms_error(&rec, &mesh.vertices) <= 1e-5 * mesh.bbox_diagonal());
        }
        assert_eq!(blend_hair_shape(&m, &[0.0; 9]).unwrap(), TemplateMesh::positions_from_flat(&m.mean));
    }

    #[test]
    fn duplicates_do_not_change_sigma_or_components() {
        let ms = family(5);
        let a = build_blend_model(&ms, 4).unwrap();
        let doubled: Vec<TemplateMesh> = ms.iter().chain(ms.iter()).cloned().collect();
        let b = build_blend_model(&doubled, 4).unwrap();
        assert!((a.sigma - b.sigma).abs() < 1e-12 * a.sigma);
        for (x, y) in a.components.iter().zip(&b.components) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn basis_evaluation_and_backward() {
        let m = build_blend_model(&family(6), NUM_COEFFS).unwrap();
        let mut e1 = vec![0.0; NUM_COEFFS];
        e1[0] = 1.0;
        let v = blend_hair_shape(&m, &e1).unwrap();
        for (i, p) in v.iter().enumerate() {
            for k in 0..3 {
                assert_eq!(p[k], m.mean[3 * i + k] + m.sigma * m.component(0)[3 * i + k]);
            }
        }
        let d: Vec<Vec3> = (0..m.vertex_count()).map(|i| Vec3::new(i as f64, 1.0, -0.5)).collect();
        let g = blend_hair_shape_backward(&m, &d).unwrap();
        for n in 0..NUM_COEFFS {
            let mut th = vec![0.0; NUM_COEFFS];
            th[n] = 1.0;
            let plus = blend_hair_shape(&m, &th).unwrap();
            let base = blend_hair_shape(&m, &vec![0.0; NUM_COEFFS]).unwrap();
            let fd: f64 = plus.iter().zip(&base).zip(&d).map(|((a, b), g)| (a - b).dot(g)).sum();
            assert!((fd - g[n]).abs() < 1e-8 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn errors() {
        let ms = family(3);
        assert!(build_blend_model(&ms[..1], 2).is_err());
        let other = hair_mesh(5, 12, &HairStyle::default());
        assert!(matches!(build_blend_model(&[ms[0].clone(), other], 2), Err(Error::Shape(_))));
        let m = build_blend_model(&ms, 2).unwrap();
        assert!(matches!(blend_hair_shape(&m, &[0.0; 3]), Err(Error::Shape(_))));
    }

    #[test]
    fn container_round_trip() {
        let m = build_blend_model(&family(4), 5).unwrap();
        let back = HairBlendModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back.rank, m.rank);
        assert_eq!(back.template.faces, m.template.faces);
        for (a, b) in back.mean.iter().zip(&m.mean) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
        let mut bytes = m.to_bytes();
        bytes.truncate(bytes.len() - 3);
        assert!(HairBlendModel::from_bytes(&bytes).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn blending_is_affine(a in prop::collection::vec(-2.0f64..2.0, 4), b in prop::collection::vec(-2.0f64..2.0, 4), alpha in 0.0f64..1.0) {
            let m = build_blend_model(&family(5), 4).unwrap();
            let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + (1.0 - alpha) * y).collect();
            let lhs = blend_hair_shape(&m, &mix).unwrap();
            let (va, vb) = (blend_hair_shape(&m, &a).unwrap(), blend_hair_shape(&m, &b).unwrap());
            for ((l, x), y) in lhs.iter().zip(&va).zip(&vb) {
                prop_assert!((l - (x * alpha + y * (1.0 - alpha))).norm() < 1e-9);
            }
        }
    }
}
