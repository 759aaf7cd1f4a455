//! Triangle meshes with per-corner UVs, OBJ I/O, and the procedural head
//! parts used by the synthetic data pipeline.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::Vec3;

/// Scalar vertex label for face parts in mesh label renders.
pub const FACE_LABEL: f64 = 1.0;
/// Scalar vertex label for hair parts in mesh label renders.
pub const HAIR_LABEL: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    /// Per-face corner UVs; empty when the mesh has no UV layout.
    pub uvs: Vec<[[f64; 2]; 3]>,
    /// Per-vertex scalar labels (2 hair, 1 face).
    pub labels: Vec<f64>,
}

impl TemplateMesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>, uvs: Vec<[[f64; 2]; 3]>, label: f64) -> Result<Self> {
        let labels = vec![label; vertices.len()];
        let mesh = Self {
            vertices,
            faces,
            uvs,
            labels,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let nv = self.vertices.len();
        if let Some(f) = self.faces.iter().find(|f| f.iter().any(|&i| i >= nv)) {
            return Err(Error::Shape(format!("face {f:?} indexes past {nv} vertices")));
        }
        if !self.uvs.is_empty() && self.uvs.len() != self.faces.len() {
            return Err(Error::Shape(format!(
                "{} UV triangles for {} faces",
                self.uvs.len(),
                self.faces.len()
            )));
        }
        if self.uvs.iter().flatten().flatten().any(|&c| !(0.0..=1.0).contains(&c)) {
            return Err(Error::Config("UV coordinates must lie in [0,1]".into()));
        }
        if self.labels.len() != nv {
            return Err(Error::Shape("label count differs from vertex count".into()));
        }
        if self.vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::Numeric("mesh has non-finite vertices".into()));
        }
        Ok(())
    }

    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::Shape(format!(
                "expected {} vertices, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        Ok(Self {
            vertices,
            ..self.clone()
        })
    }

    pub fn set_label(&mut self, label: f64) {
        self.labels = vec![label; self.vertices.len()];
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f];
        0.5 * (self.vertices[b] - self.vertices[a])
            .cross(&(self.vertices[c] - self.vertices[a]))
            .norm()
    }

    pub fn centroid(&self) -> Vec3 {
        self.vertices.iter().sum::<Vec3>() / self.vertices.len() as f64
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (hi - lo).norm()
    }

    /// Vertex positions flattened as `[x0, y0, z0, x1, ...]`.
    pub fn flat_positions(&self) -> Vec<f64> {
        self.vertices.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
    }

    pub fn positions_from_flat(flat: &[f64]) -> Vec<Vec3> {
        flat.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
    }

    /// Number of face-connected components.
    pub fn connected_components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for f in &self.faces {
            for k in 1..3 {
                let (a, b) = (find(&mut parent, f[0]), find(&mut parent, f[k]));
                parent[a] = b;
            }
        }
        let mut used = vec![false; self.vertices.len()];
        for f in &self.faces {
            for &i in f {
                used[i] = true;
            }
        }
        let mut roots: Vec<usize> = (0..self.vertices.len())
            .filter(|&i| used[i])
            .map(|i| find(&mut parent, i))
            .collect();
        roots.sort_unstable();
        roots.dedup();
        roots.len()
    }

    /// Undirected edges mapped to the faces that contain them.
    pub fn edge_faces(&self) -> HashMap<(usize, usize), Vec<usize>> {
        let mut map: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (fi, f) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                map.entry((a.min(b), a.max(b))).or_default().push(fi);
            }
        }
        map
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        for tri in &self.uvs {
            for uv in tri {
                let _ = writeln!(s, "vt {} {}", uv[0], uv[1]);
            }
        }
        for (fi, f) in self.faces.iter().enumerate() {
            if self.uvs.is_empty() {
                let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
            } else {
                let t = 3 * fi + 1;
                let _ = writeln!(s, "f {}/{} {}/{} {}/{}", f[0] + 1, t, f[1] + 1, t + 1, f[2] + 1, t + 2);
            }
        }
        s
    }

    /// Parses a Wavefront OBJ. Polygons are fan-triangulated; UVs are kept
    /// per corner. Faces without `vt` references leave the UV layout empty.
    pub fn from_obj(text: &str, label: f64) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut tex = Vec::new();
        let mut faces = Vec::new();
        let mut uvs = Vec::new();
        let mut all_have_uv = true;
        let parse = |tok: Option<&str>, line: usize| -> Result<f64> {
            tok.and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::Data(format!("OBJ line {line}: bad number")))
        };
        for (ln, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let (x, y, z) = (parse(it.next(), ln)?, parse(it.next(), ln)?, parse(it.next(), ln)?);
                    vertices.push(Vec3::new(x, y, z));
                }
                Some("vt") => tex.push([parse(it.next(), ln)?, parse(it.next(), ln)?]),
                Some("f") => {
                    let mut corners = Vec::new();
                    for tok in it {
                        let mut parts = tok.split('/');
                        let vi = resolve_index(parts.next(), vertices.len(), ln)?
                            .ok_or_else(|| Error::Data(format!("OBJ line {ln}: missing vertex index")))?;
                        let ti = resolve_index(parts.next(), tex.len(), ln)?;
                        corners.push((vi, ti));
                    }
                    if corners.len() < 3 {
                        return Err(Error::Data(format!("OBJ line {ln}: face with fewer than 3 corners")));
                    }
                    for k in 1..corners.len() - 1 {
                        let tri = [corners[0], corners[k], corners[k + 1]];
                        faces.push([tri[0].0, tri[1].0, tri[2].0]);
                        match (tri[0].1, tri[1].1, tri[2].1) {
                            (Some(a), Some(b), Some(c)) => uvs.push([tex[a], tex[b], tex[c]]),
                            _ => all_have_uv = false,
                        }
                    }
                }
                _ => {}
            }
        }
        if !all_have_uv {
            uvs.clear();
        }
        Self::new(vertices, faces, uvs, label)
    }

    pub fn read_obj(path: &Path, label: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_obj(&text, label)
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_obj()).map_err(|e| Error::io(path, e))
    }
}

fn resolve_index(tok: Option<&str>, len: usize, line: usize) -> Result<Option<usize>> {
    let Some(tok) = tok.filter(|t| !t.is_empty()) else {
        return Ok(None);
    };
    let i: i64 = tok
        .parse()
        .map_err(|_| Error::Data(format!("OBJ line {line}: bad index {tok}")))?;
    let idx = if i < 0 { len as i64 + i } else { i - 1 };
    if idx < 0 || idx as usize >= len {
        return Err(Error::Data(format!("OBJ line {line}: index {i} out of range")));
    }
    Ok(Some(idx as usize))
}

/// Latitude/longitude grid with a single pole vertex on top. `polar(s, phi)`
/// gives the point for ring parameter `s` in `(0, 1]` at azimuth `phi`
/// (0 faces +z); `top` is the pole. When `close_bottom` is set a second pole
/// closes the surface. The UV layout maps azimuth to u and `s` to v, with the
/// seam at the back of the head.
fn polar_grid(
    rings: usize,
    segments: usize,
    top: Vec3,
    bottom: Option<Vec3>,
    polar: impl Fn(f64, f64) -> Vec3,
    label: f64,
) -> TemplateMesh {
    let ring_count = if bottom.is_some() { rings - 1 } else { rings };
    let mut vertices = vec![top];
    let azimuth = |j: usize| PI + 2.0 * PI * j as f64 / segments as f64;
    for i in 1..=ring_count {
        let s = i as f64 / rings as f64;
        for j in 0..segments {
            vertices.push(polar(s, azimuth(j)));
        }
    }
    let ring_vertex = |i: usize, j: usize| 1 + (i - 1) * segments + (j % segments);
    let uv = |i: usize, j: usize| [j as f64 / segments as f64, i as f64 / rings as f64];
    let mut faces = Vec::new();
    let mut uvs = Vec::new();
    for j in 0..segments {
        faces.push([0, ring_vertex(1, j), ring_vertex(1, j + 1)]);
        uvs.push([[(j as f64 + 0.5) / segments as f64, 0.0], uv(1, j), uv(1, j + 1)]);
    }
    for i in 1..ring_count {
        for j in 0..segments {
            let (a, b, c, d) = (ring_vertex(i, j), ring_vertex(i, j + 1), ring_vertex(i + 1, j), ring_vertex(i + 1, j + 1));
            faces.push([a, d, b]);
            uvs.push([uv(i, j), uv(i + 1, j + 1), uv(i, j + 1)]);
            faces.push([a, c, d]);
            uvs.push([uv(i, j), uv(i + 1, j), uv(i + 1, j + 1)]);
        }
    }
    if let Some(bottom) = bottom {
        let pole = vertices.len();
        vertices.push(bottom);
        for j in 0..segments {
            faces.push([ring_vertex(ring_count, j), pole, ring_vertex(ring_count, j + 1)]);
            uvs.push([uv(ring_count, j), [(j as f64 + 0.5) / segments as f64, 1.0], uv(ring_count, j + 1)]);
        }
    }
    let n = vertices.len();
    TemplateMesh {
        vertices,
        faces,
        uvs,
        labels: vec![label; n],
    }
}

/// Closed ellipsoidal "face" mesh with a nose bump on the +z side.
pub fn face_mesh(rings: usize, segments: usize) -> TemplateMesh {
    let radii = Vec3::new(26.0, 30.0, 28.0);
    let point = |s: f64, phi: f64| {
        let theta = s * PI;
        let dir = Vec3::new(theta.sin() * phi.sin(), theta.cos(), theta.sin() * phi.cos());
        // nose: bump centered on the front, slightly below the equator
        let front = Vec3::new(0.0, -0.1, 1.0).normalize();
        let bump = 4.0 * (-(1.0 - dir.dot(&front)) * 40.0).exp();
        let p = dir.component_mul(&radii);
        p + dir * bump
    };
    polar_grid(
        rings,
        segments,
        Vec3::new(0.0, radii.y, 0.0),
        Some(Vec3::new(0.0, -radii.y, 0.0)),
        point,
        FACE_LABEL,
    )
}

/// Parameters of the procedural hairstyle family. The zero value is the
/// template cap.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HairStyle {
    /// Relative change of how far down the head the hair reaches.
    pub length: f64,
    /// Outward flare growing towards the hair tips.
    pub flare: f64,
    /// Uniform radial volume.
    pub volume: f64,
    /// Extra length at the back relative to the front.
    pub back_length: f64,
}

pub const HAIR_RADIUS: f64 = 31.0;

/// Open hair cap over the top and back of the head, deformed by `style`.
pub fn hair_mesh(rings: usize, segments: usize, style: &HairStyle) -> TemplateMesh {
    let point = move |s: f64, phi: f64| hair_point(s, phi, style);
    polar_grid(rings, segments, hair_point(0.0, 0.0, style), None, point, HAIR_LABEL)
}

fn hair_point(s: f64, phi: f64, style: &HairStyle) -> Vec3 {
    // hairline: high at the front (phi = 0), low at the back
    let back = 0.5 * (1.0 - phi.cos());
    let theta_max = (60.0 + 55.0 * back).to_radians() * (1.0 + style.length + style.back_length * back);
    let theta = s * theta_max;
    let r = HAIR_RADIUS * (1.0 + style.volume + style.flare * s * s);
    Vec3::new(r * theta.sin() * phi.sin(), r * theta.cos(), r * theta.sin() * phi.cos())
}

/// Single triangle spanning the given UV corners, for tests and examples.
pub fn uv_triangle(uv: [[f64; 2]; 3]) -> TemplateMesh {
    let vertices = uv.iter().map(|c| Vec3::new(c[0], c[1], 0.0)).collect();
    TemplateMesh {
        vertices,
        faces: vec![[0, 1, 2]],
        uvs: vec![uv],
        labels: vec![FACE_LABEL; 3],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn signed_volume(m: &TemplateMesh) -> f64 {
        m.faces
            .iter()
            .map(|f| m.vertices[f[0]].dot(&m.vertices[f[1]].cross(&m.vertices[f[2]])) / 6.0)
            .sum()
    }

    #[test]
    fn face_mesh_is_closed_outward_and_connected() {
        let m = face_mesh(12, 24);
        m.validate().unwrap();
        assert!(signed_volume(&m) > 0.0);
        assert_eq!(m.connected_components(), 1);
        assert!(m.edge_faces().values().all(|f| f.len() == 2));
        assert!((0..m.faces.len()).all(|f| m.face_area(f) > 1e-6));
    }

    #[test]
    fn hair_cap_is_open_with_single_boundary_ring() {
        let m = hair_mesh(10, 24, &HairStyle::default());
        m.validate().unwrap();
        let boundary = m.edge_faces().values().filter(|f| f.len() == 1).count();
        assert_eq!(boundary, 24);
        assert_eq!(m.vertices.len(), 1 + 10 * 24);
        // outward: normals point away from the origin
        let f = m.faces[m.faces.len() / 2];
        let n = (m.vertices[f[1]] - m.vertices[f[0]]).cross(&(m.vertices[f[2]] - m.vertices[f[0]]));
        assert!(n.dot(&m.vertices[f[0]]) > 0.0);
    }

    #[test]
    fn styles_share_topology() {
        let a = hair_mesh(8, 16, &HairStyle::default());
        let b = hair_mesh(8, 16, &HairStyle { length: 0.2, flare: 0.3, volume: 0.05, back_length: 0.1 });
        assert_eq!(a.faces, b.faces);
        assert_eq!(a.uvs, b.uvs);
        assert_ne!(a.vertices, b.vertices);
    }

    #[test]
    fn obj_round_trip_keeps_topology() {
        let m = hair_mesh(4, 8, &HairStyle::default());
        let back = TemplateMesh::from_obj(&m.to_obj(), HAIR_LABEL).unwrap();
        assert_eq!(back.faces, m.faces);
        assert_eq!(back.uvs, m.uvs);
        for (a, b) in back.vertices.iter().zip(&m.vertices) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn obj_parser_handles_quads_and_missing_uvs() {
        let quad = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n";
        let m = TemplateMesh::from_obj(quad, 1.0).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
        assert!(m.uvs.is_empty());
        assert!(TemplateMesh::from_obj("v 0 0 0\nf 1 2 3\n", 1.0).is_err());
    }

    #[test]
    fn component_count_detects_disconnected_parts() {
        let mut m = uv_triangle([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        m.vertices.extend([Vec3::new(5.0, 0.0, 0.0), Vec3::new(6.0, 0.0, 0.0), Vec3::new(5.0, 1.0, 0.0)]);
        m.labels.extend([1.0; 3]);
        m.faces.push([3, 4, 5]);
        m.uvs.push([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(m.connected_components(), 2);
    }
}
