//! Composition of the face and hair Gaussian layers and its reverse pass.

use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::math::{rotation_to_quat, Mat3, Vec3};
use crate::mesh::{face_mesh, hair_mesh, HairStyle, TemplateMesh, FACE_LABEL, HAIR_LABEL};
use crate::render::{render, render_backward, RenderGrads, RenderOptions, RenderOutput};
use crate::scene::{
    build_uv_rig, spawn_backward, spawn_gaussians, surface_points_backward, GaussianGrads, GaussianSet, GaussianTextureMap, PartLabel, UvRig,
    CH_ROTATION, CH_SCALE, FACE_GAMMA, HAIR_GAMMA,
};
use crate::silhouette::{render_mesh_labels, render_mesh_labels_backward, LabelImage, LabeledMeshScene, MeshTopology};

/// Mesh tessellation and texture size of a head rig.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigSpec {
    pub texture_resolution: usize,
    pub face_rings: usize,
    pub face_segments: usize,
    pub hair_rings: usize,
    pub hair_segments: usize,
}

impl Default for RigSpec {
    fn default() -> Self {
        Self {
            texture_resolution: 64,
            face_rings: 24,
            face_segments: 48,
            hair_rings: 12,
            hair_segments: 24,
        }
    }
}

impl RigSpec {
    pub fn validate(&self) -> Result<()> {
        if self.texture_resolution < 2 {
            return Err(Error::Config("texture resolution must be at least 2".into()));
        }
        if self.face_rings < 3 || self.hair_rings < 2 || self.face_segments < 3 || self.hair_segments < 3 {
            return Err(Error::Config("mesh tessellation is too coarse".into()));
        }
        Ok(())
    }
}

/// The fixed face mesh, the hair template, and their UV rigs.
#[derive(Debug, Clone)]
pub struct HeadRig {
    pub spec: RigSpec,
    pub face_mesh: TemplateMesh,
    pub face_rig: UvRig,
    pub face_topology: MeshTopology,
    pub hair_template: TemplateMesh,
    pub hair_rig: UvRig,
    pub hair_topology: MeshTopology,
}

impl HeadRig {
    pub fn new(spec: RigSpec) -> Result<Self> {
        spec.validate()?;
        let face = face_mesh(spec.face_rings, spec.face_segments);
        let hair = self::hair_template(&spec, &HairStyle::default());
        Ok(Self {
            spec,
            face_rig: build_uv_rig(&face, spec.texture_resolution)?,
            face_topology: MeshTopology::from_mesh(&face)?,
            hair_rig: build_uv_rig(&hair, spec.texture_resolution)?,
            hair_topology: MeshTopology::from_mesh(&hair)?,
            face_mesh: face,
            hair_template: hair,
        })
    }

    /// Hair mesh of `style` on this rig's tessellation.
    pub fn hair_mesh(&self, style: &HairStyle) -> TemplateMesh {
        hair_template(&self.spec, style)
    }

    pub fn texture_resolution(&self) -> usize {
        self.spec.texture_resolution
    }

    /// Face and hair Gaussians for the given textures and hair vertices.
    pub fn compose(&self, face: &GaussianTextureMap, hair: &GaussianTextureMap, hair_vertices: &[Vec3]) -> Result<HeadGaussians> {
        let face_set = spawn_gaussians(face, &self.face_rig, &self.face_mesh.vertices, FACE_GAMMA, PartLabel::Face)?;
        let hair_set = spawn_gaussians(hair, &self.hair_rig, hair_vertices, HAIR_GAMMA, PartLabel::Hair)?;
        let combined = GaussianSet::concat(&[&face_set, &hair_set]);
        Ok(HeadGaussians {
            face_count: face_set.len(),
            combined,
        })
    }

    /// Reverse pass of [`HeadRig::compose`]. `grads` and `d_offsets` are
    /// indexed like `head.combined`.
    pub fn compose_backward(
        &self,
        face: &GaussianTextureMap,
        hair: &GaussianTextureMap,
        head: &HeadGaussians,
        grads: &GaussianGrads,
        d_offsets: Option<&[Vec3]>,
    ) -> Result<HeadGrads> {
        let n = head.combined.len();
        if grads.len() != n || d_offsets.is_some_and(|d| d.len() != n) {
            return Err(Error::Shape(format!("head gradients do not cover all {n} Gaussians")));
        }
        let split = head.face_count;
        let (face_set, hair_set) = head.split();
        let (d_face, _) = spawn_backward(face, &face_set, FACE_GAMMA, &grads.slice(0..split), d_offsets.map(|d| &d[..split]))?;
        let (d_hair, d_anchor) = spawn_backward(hair, &hair_set, HAIR_GAMMA, &grads.slice(split..n), d_offsets.map(|d| &d[split..]))?;
        Ok(HeadGrads {
            face: d_face,
            hair: d_hair,
            hair_vertices: surface_points_backward(&self.hair_rig, &d_anchor),
        })
    }

    /// Rig-aligned prior textures for the face mesh and the given hair shape.
    /// See [`surface_prior`].
    pub fn prior_textures(&self, hair_vertices: &[Vec3]) -> Result<(GaussianTextureMap, GaussianTextureMap)> {
        Ok((
            surface_prior(&self.face_rig, &self.face_mesh.uvs, &self.face_mesh.vertices)?,
            surface_prior(&self.hair_rig, &self.hair_template.uvs, hair_vertices)?,
        ))
    }

    /// Scalar mesh-label render of face (1) and hair (2).
    pub fn mesh_labels(&self, hair_vertices: &[Vec3], camera: &CameraPose, size: usize, softness: f64) -> Result<LabelImage> {
        let scene = self.label_scene(hair_vertices);
        render_mesh_labels(&scene, camera, size, size, softness)
    }

    /// Gradient of `Σ d_values · labels` w.r.t. the hair vertices.
    pub fn mesh_labels_backward(&self, hair_vertices: &[Vec3], camera: &CameraPose, size: usize, softness: f64, d_values: &[f64]) -> Result<Vec<Vec3>> {
        let scene = self.label_scene(hair_vertices);
        let mut g = render_mesh_labels_backward(&scene, camera, size, size, softness, d_values)?;
        Ok(g.swap_remove(1))
    }

    fn label_scene<'a>(&'a self, hair_vertices: &'a [Vec3]) -> LabeledMeshScene<'a> {
        LabeledMeshScene::new()
            .with_part(&self.face_mesh.vertices, &self.face_topology, FACE_LABEL)
            .with_part(hair_vertices, &self.hair_topology, HAIR_LABEL)
    }
}

/// Thickness of prior Gaussians along the surface normal.
pub const PRIOR_THICKNESS: f64 = 0.25;

/// Tangent extent of a prior Gaussian relative to its texel footprint.
pub const PRIOR_COVERAGE: f64 = 0.7;

/// Texture of flat Gaussians lying in the surface: the first two axes follow
/// the texel footprint (the surface images of one texel step in u and v),
/// the third is the face normal. Offsets, colors and opacity are zero.
pub fn surface_prior(rig: &UvRig, uvs: &[[[f64; 2]; 3]], vertices: &[Vec3]) -> Result<GaussianTextureMap> {
    if uvs.len() != rig.faces.len() || vertices.len() != rig.vertex_count {
        return Err(Error::Shape("mesh does not match the rig".into()));
    }
    let r = rig.resolution;
    let step = 1.0 / r as f64;
    let mut tex = GaussianTextureMap::zeros(r, r);
    for (t, b) in rig.valid_texels() {
        let [a, bb, c] = rig.faces[b.face].map(|i| vertices[i]);
        let [ua, ub, uc] = uvs[b.face];
        let (e1, e2) = (bb - a, c - a);
        let (d1, d2) = ([ub[0] - ua[0], ub[1] - ua[1]], [uc[0] - ua[0], uc[1] - ua[1]]);
        let det = d1[0] * d2[1] - d1[1] * d2[0];
        let normal = e1.cross(&e2);
        if det.abs() < 1e-15 || normal.norm() < 1e-12 {
            // degenerate UV or surface triangle: fall back to an isotropic blob
            let texel = tex.texel_mut(t);
            texel[CH_ROTATION] = 1.0;
            let s = (PRIOR_COVERAGE * e1.norm().max(e2.norm()) * step).max(PRIOR_THICKNESS).ln();
            texel[CH_SCALE..CH_SCALE + 3].fill(s);
            continue;
        }
        // surface derivatives w.r.t. u and v
        let dpdu = (e1 * d2[1] - e2 * d1[1]) / det;
        let dpdv = (e2 * d1[0] - e1 * d2[0]) / det;
        let n = normal.normalize();
        let mut t1 = dpdu - n * n.dot(&dpdu);
        if t1.norm() < 1e-12 {
            t1 = dpdv - n * n.dot(&dpdv);
        }
        let t1 = t1.normalize();
        let t2 = n.cross(&t1);
        let footprint = |v: Vec3| (v.dot(&t1).abs().max(1e-12), v.dot(&t2).abs().max(1e-12));
        let (u1, u2) = footprint(dpdu * step);
        let (v1, v2) = footprint(dpdv * step);
        let extent = [u1.max(v1), u2.max(v2)];
        let rot = Mat3::from_columns(&[t1, t2, n]);
        let texel = tex.texel_mut(t);
        texel[CH_ROTATION..CH_ROTATION + 4].copy_from_slice(&rotation_to_quat(&rot));
        texel[CH_SCALE] = (PRIOR_COVERAGE * extent[0]).max(PRIOR_THICKNESS).ln();
        texel[CH_SCALE + 1] = (PRIOR_COVERAGE * extent[1]).max(PRIOR_THICKNESS).ln();
        texel[CH_SCALE + 2] = PRIOR_THICKNESS.ln();
    }
    Ok(tex)
}

fn hair_template(spec: &RigSpec, style: &HairStyle) -> TemplateMesh {
    hair_mesh(spec.hair_rings, spec.hair_segments, style)
}

/// The spawned head: face Gaussians first, then hair.
#[derive(Debug, Clone)]
pub struct HeadGaussians {
    pub combined: GaussianSet,
    pub face_count: usize,
}

impl HeadGaussians {
    fn split(&self) -> (GaussianSet, GaussianSet) {
        let c = &self.combined;
        let part = |r: std::ops::Range<usize>| GaussianSet {
            gaussians: c.gaussians[r.clone()].to_vec(),
            anchors: c.anchors[r.clone()].to_vec(),
            raw_deltas: c.raw_deltas[r.clone()].to_vec(),
            offsets: c.offsets[r.clone()].to_vec(),
            texels: c.texels[r].to_vec(),
        };
        (part(0..self.face_count), part(self.face_count..c.len()))
    }

    pub fn render(&self, camera: &CameraPose, size: usize) -> Result<RenderOutput> {
        render(&self.combined, camera, size, size, &RenderOptions::default())
    }

    pub fn render_backward(&self, camera: &CameraPose, size: usize, upstream: &RenderGrads) -> Result<GaussianGrads> {
        render_backward(&self.combined, camera, size, size, &RenderOptions::default(), upstream)
    }
}

/// Gradients of a head loss w.r.t. both textures and the hair vertices.
#[derive(Debug, Clone)]
pub struct HeadGrads {
    pub face: GaussianTextureMap,
    pub hair: GaussianTextureMap,
    pub hair_vertices: Vec<Vec3>,
}
