//! Gaussian primitives, per-texel parameter textures, and the UV rig that
//! spawns Gaussians on a (possibly deformed) template mesh.

use rayon::prelude::*;

use crate::error::{ensure_finite, Error, Result};
use crate::math::{normalize_quat, normalize_quat_backward, sigmoid, Vec3};
use crate::mesh::TemplateMesh;

/// Channels per texel: delta position (3), raw quaternion (4), raw scale (3),
/// raw color (3), raw opacity (1).
pub const TEXTURE_CHANNELS: usize = 14;
pub const CH_DELTA: usize = 0;
pub const CH_ROTATION: usize = 3;
pub const CH_SCALE: usize = 7;
pub const CH_COLOR: usize = 10;
pub const CH_OPACITY: usize = 13;

pub const MIN_SCALE: f64 = 1e-4;
pub const MAX_SCALE: f64 = 1e4;

/// Offset clamp for face Gaussians, in millimeters.
pub const FACE_GAMMA: f64 = 40.0;
/// Offset clamp for hair Gaussians, in millimeters.
pub const HAIR_GAMMA: f64 = 20.0;

/// Semantic class carried by every Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PartLabel {
    Background,
    Face,
    Hair,
}

impl PartLabel {
    pub fn one_hot(self) -> [f64; 3] {
        match self {
            PartLabel::Background => [1.0, 0.0, 0.0],
            PartLabel::Face => [0.0, 1.0, 0.0],
            PartLabel::Hair => [0.0, 0.0, 1.0],
        }
    }

    /// Segmentation class index (0 background, 1 face, 2 hair).
    pub fn class_index(self) -> usize {
        self as usize
    }

    pub fn from_class_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(PartLabel::Background),
            1 => Ok(PartLabel::Face),
            2 => Ok(PartLabel::Hair),
            _ => Err(Error::Data(format!("class index {i} is not in {{0,1,2}}"))),
        }
    }

    pub fn from_one_hot(v: [f64; 3]) -> Result<Self> {
        [PartLabel::Background, PartLabel::Face, PartLabel::Hair]
            .into_iter()
            .find(|l| l.one_hot() == v)
            .ok_or_else(|| Error::Data(format!("{v:?} is not a one-hot label")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrimitive {
    pub position: Vec3,
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: [f64; 4],
    /// Per-axis standard deviations, world units.
    pub scale: Vec3,
    pub color: [f64; 3],
    pub opacity: f64,
    pub label: PartLabel,
}

impl GaussianPrimitive {
    pub fn validate(&self) -> Result<()> {
        let n = crate::math::quat_norm(self.rotation);
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::Data(format!("rotation norm {n} is not 1")));
        }
        if !(0.0..=1.0).contains(&self.opacity) || self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Data("color and opacity must lie in [0,1]".into()));
        }
        if self.scale.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
            return Err(Error::Data("scales must be positive".into()));
        }
        if !self.position.iter().all(|p| p.is_finite()) {
            return Err(Error::Numeric("non-finite position".into()));
        }
        Ok(())
    }
}

/// `H x W x 14` grid of raw (pre-activation) Gaussian parameters, stored
/// row-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTextureMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl GaussianTextureMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width * TEXTURE_CHANNELS],
        }
    }

    pub fn from_data(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * TEXTURE_CHANNELS {
            return Err(Error::Shape(format!(
                "{height}x{width} texture needs {} values, got {}",
                height * width * TEXTURE_CHANNELS,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn texel(&self, index: usize) -> &[f64] {
        &self.data[index * TEXTURE_CHANNELS..(index + 1) * TEXTURE_CHANNELS]
    }

    pub fn texel_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.data[index * TEXTURE_CHANNELS..(index + 1) * TEXTURE_CHANNELS]
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite(&self.data, "texture map")
    }
}

/// Binding of one texel center to a point on a mesh face.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TexelBinding {
    pub face: usize,
    pub bary: [f64; 3],
}

/// Texel-to-surface binding. Depends only on the UV layout, so it stays valid
/// when the mesh vertices move.
#[derive(Debug, Clone, PartialEq)]
pub struct UvRig {
    pub resolution: usize,
    /// Row-major per-texel binding; `None` for texels outside every UV triangle.
    pub bindings: Vec<Option<TexelBinding>>,
    pub vertex_count: usize,
    pub faces: Vec<[usize; 3]>,
}

impl UvRig {
    pub fn valid_count(&self) -> usize {
        self.bindings.iter().filter(|b| b.is_some()).count()
    }

    /// `(texel index, binding)` for valid texels in row-major order.
    pub fn valid_texels(&self) -> impl Iterator<Item = (usize, &TexelBinding)> {
        self.bindings.iter().enumerate().filter_map(|(i, b)| b.as_ref().map(|b| (i, b)))
    }

    pub fn validity_mask(&self) -> Vec<bool> {
        self.bindings.iter().map(Option::is_some).collect()
    }
}

/// Center of texel `(row, col)` in UV space.
pub fn texel_center(row: usize, col: usize, resolution: usize) -> [f64; 2] {
    let r = resolution as f64;
    [(col as f64 + 0.5) / r, (row as f64 + 0.5) / r]
}

fn barycentric(p: [f64; 2], tri: &[[f64; 2]; 3]) -> Option<[f64; 3]> {
    let [a, b, c] = *tri;
    let det = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1]);
    if det.abs() < 1e-18 {
        return None;
    }
    let l0 = ((b[1] - c[1]) * (p[0] - c[0]) + (c[0] - b[0]) * (p[1] - c[1])) / det;
    let l1 = ((c[1] - a[1]) * (p[0] - c[0]) + (a[0] - c[0]) * (p[1] - c[1])) / det;
    Some([l0, l1, 1.0 - l0 - l1])
}

pub fn build_uv_rig(mesh: &TemplateMesh, resolution: usize) -> Result<UvRig> {
    if resolution == 0 {
        return Err(Error::Config("rig resolution must be at least 1".into()));
    }
    if mesh.uvs.is_empty() || mesh.faces.is_empty() {
        return Err(Error::Config("mesh has an empty UV layout".into()));
    }
    mesh.validate()?;
    const EPS: f64 = 1e-12;
    let res = resolution as f64;
    let mut bindings = vec![None; resolution * resolution];
    // faces in ascending order, first hit wins: overlaps go to the lowest index
    for (fi, tri) in mesh.uvs.iter().enumerate() {
        let (mut u0, mut u1, mut v0, mut v1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for c in tri {
            u0 = u0.min(c[0]);
            u1 = u1.max(c[0]);
            v0 = v0.min(c[1]);
            v1 = v1.max(c[1]);
        }
        let col_range = |lo: f64, hi: f64| {
            let a = ((lo * res - 0.5).floor().max(0.0)) as usize;
            let b = ((hi * res - 0.5).ceil().max(0.0) as usize).min(resolution - 1);
            a..=b
        };
        for row in col_range(v0, v1) {
            for col in col_range(u0, u1) {
                let idx = row * resolution + col;
                if bindings[idx].is_some() {
                    continue;
                }
                let Some(l) = barycentric(texel_center(row, col, resolution), tri) else {
                    continue;
                };
                if l.iter().all(|&x| x >= -EPS) {
                    let l = l.map(|x| x.max(0.0));
                    let s: f64 = l.iter().sum();
                    bindings[idx] = Some(TexelBinding {
                        face: fi,
                        bary: l.map(|x| x / s),
                    });
                }
            }
        }
    }
    Ok(UvRig {
        resolution,
        bindings,
        vertex_count: mesh.vertices.len(),
        faces: mesh.faces.clone(),
    })
}

/// Barycentric surface points of every valid texel, row-major. Linear in the
/// vertex positions.
pub fn surface_points(rig: &UvRig, vertices: &[Vec3]) -> Result<Vec<Vec3>> {
    if vertices.len() != rig.vertex_count {
        return Err(Error::Shape(format!(
            "rig built for {} vertices, got {}",
            rig.vertex_count,
            vertices.len()
        )));
    }
    Ok(rig
        .valid_texels()
        .map(|(_, b)| {
            let f = rig.faces[b.face];
            vertices[f[0]] * b.bary[0] + vertices[f[1]] * b.bary[1] + vertices[f[2]] * b.bary[2]
        })
        .collect())
}

/// Transposes [`surface_points`]: scatters per-point gradients onto vertices.
pub fn surface_points_backward(rig: &UvRig, d_points: &[Vec3]) -> Vec<Vec3> {
    let mut out = vec![Vec3::zeros(); rig.vertex_count];
    for ((_, b), d) in rig.valid_texels().zip(d_points) {
        let f = rig.faces[b.face];
        for k in 0..3 {
            out[f[k]] += d * b.bary[k];
        }
    }
    out
}

/// Spawned Gaussians plus what the losses need to see.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianSet {
    pub gaussians: Vec<GaussianPrimitive>,
    /// Surface point each Gaussian is anchored to.
    pub anchors: Vec<Vec3>,
    /// Unclamped delta position read from the texture.
    pub raw_deltas: Vec<Vec3>,
    /// Clamped delta actually applied: `position - anchor`.
    pub offsets: Vec<Vec3>,
    /// Source texel index of each Gaussian.
    pub texels: Vec<usize>,
}

impl GaussianSet {
    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn from_primitives(gaussians: Vec<GaussianPrimitive>) -> Self {
        let n = gaussians.len();
        Self {
            anchors: gaussians.iter().map(|g| g.position).collect(),
            raw_deltas: vec![Vec3::zeros(); n],
            offsets: vec![Vec3::zeros(); n],
            texels: (0..n).collect(),
            gaussians,
        }
    }

    pub fn concat(parts: &[&GaussianSet]) -> Self {
        let mut out = GaussianSet::default();
        for p in parts {
            out.gaussians.extend_from_slice(&p.gaussians);
            out.anchors.extend_from_slice(&p.anchors);
            out.raw_deltas.extend_from_slice(&p.raw_deltas);
            out.offsets.extend_from_slice(&p.offsets);
            out.texels.extend_from_slice(&p.texels);
        }
        out
    }

    /// Flattened `[N, 23]` rows: position, rotation, scale, color, opacity,
    /// one-hot label, anchor, offset.
    pub fn to_rows(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * 23);
        for (i, g) in self.gaussians.iter().enumerate() {
            out.extend(g.position.iter());
            out.extend(g.rotation);
            out.extend(g.scale.iter());
            out.extend(g.color);
            out.push(g.opacity);
            out.extend(g.label.one_hot());
            out.extend(self.anchors[i].iter());
            out.extend(self.offsets[i].iter());
        }
        out
    }

    pub fn from_rows(rows: &[f64]) -> Result<Self> {
        if rows.len() % 23 != 0 {
            return Err(Error::Shape("Gaussian rows must have 23 columns".into()));
        }
        let mut set = GaussianSet::default();
        for (i, r) in rows.chunks_exact(23).enumerate() {
            set.gaussians.push(GaussianPrimitive {
                position: Vec3::new(r[0], r[1], r[2]),
                rotation: normalize_quat([r[3], r[4], r[5], r[6]]),
                scale: Vec3::new(r[7], r[8], r[9]),
                color: [r[10], r[11], r[12]],
                opacity: r[13],
                label: PartLabel::from_one_hot([r[14], r[15], r[16]])?,
            });
            set.anchors.push(Vec3::new(r[17], r[18], r[19]));
            let off = Vec3::new(r[20], r[21], r[22]);
            set.offsets.push(off);
            set.raw_deltas.push(off);
            set.texels.push(i);
        }
        Ok(set)
    }
}

/// Decodes the raw parameters of one texel into a Gaussian at `anchor`.
pub fn decode_texel(raw: &[f64], anchor: Vec3, gamma: f64, label: PartLabel) -> (GaussianPrimitive, Vec3, Vec3) {
    let delta = Vec3::new(raw[CH_DELTA], raw[CH_DELTA + 1], raw[CH_DELTA + 2]);
    let offset = delta.map(|d| d.clamp(-gamma, gamma));
    let q = [raw[CH_ROTATION], raw[CH_ROTATION + 1], raw[CH_ROTATION + 2], raw[CH_ROTATION + 3]];
    let g = GaussianPrimitive {
        position: anchor + offset,
        rotation: normalize_quat(q),
        scale: Vec3::from_fn(|i, _| raw[CH_SCALE + i].exp().clamp(MIN_SCALE, MAX_SCALE)),
        color: std::array::from_fn(|i| sigmoid(raw[CH_COLOR + i])),
        opacity: sigmoid(raw[CH_OPACITY]),
        label,
    };
    (g, delta, offset)
}

/// Spawns one Gaussian per valid texel on the surface of `vertices` (which
/// must share the rig's topology). Offsets are clamped to `[-gamma, gamma]`
/// componentwise.
pub fn spawn_gaussians(
    texture: &GaussianTextureMap,
    rig: &UvRig,
    vertices: &[Vec3],
    gamma: f64,
    label: PartLabel,
) -> Result<GaussianSet> {
    if texture.height != rig.resolution || texture.width != rig.resolution {
        return Err(Error::Shape(format!(
            "texture {}x{} does not match rig resolution {}",
            texture.height, texture.width, rig.resolution
        )));
    }
    if !(gamma > 0.0) {
        return Err(Error::Config("gamma must be positive".into()));
    }
    texture.validate()?;
    let anchors = surface_points(rig, vertices)?;
    let texels: Vec<usize> = rig.valid_texels().map(|(i, _)| i).collect();
    let decoded: Vec<_> = texels
        .par_iter()
        .zip(anchors.par_iter())
        .map(|(&t, &a)| decode_texel(texture.texel(t), a, gamma, label))
        .collect();
    let mut set = GaussianSet {
        anchors,
        texels,
        ..Default::default()
    };
    for (g, delta, offset) in decoded {
        set.gaussians.push(g);
        set.raw_deltas.push(delta);
        set.offsets.push(offset);
    }
    Ok(set)
}

/// Per-Gaussian gradients of a scalar loss w.r.t. activated parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianGrads {
    pub position: Vec<Vec3>,
    pub rotation: Vec<[f64; 4]>,
    pub scale: Vec<Vec3>,
    pub color: Vec<[f64; 3]>,
    pub opacity: Vec<f64>,
    /// Gradient w.r.t. the label payload (one-hot channels).
    pub label: Vec<[f64; 3]>,
}

impl GaussianGrads {
    pub fn zeros(n: usize) -> Self {
        Self {
            position: vec![Vec3::zeros(); n],
            rotation: vec![[0.0; 4]; n],
            scale: vec![Vec3::zeros(); n],
            color: vec![[0.0; 3]; n],
            opacity: vec![0.0; n],
            label: vec![[0.0; 3]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            position: self.position[range.clone()].to_vec(),
            rotation: self.rotation[range.clone()].to_vec(),
            scale: self.scale[range.clone()].to_vec(),
            color: self.color[range.clone()].to_vec(),
            opacity: self.opacity[range.clone()].to_vec(),
            label: self.label[range].to_vec(),
        }
    }

    /// The 14 parameter channels of Gaussian `i` in texture channel order.
    pub fn channels(&self, i: usize) -> [f64; 14] {
        let mut out = [0.0; 14];
        out[0..3].copy_from_slice(self.position[i].as_slice());
        out[3..7].copy_from_slice(&self.rotation[i]);
        out[7..10].copy_from_slice(self.scale[i].as_slice());
        out[10..13].copy_from_slice(&self.color[i]);
        out[13] = self.opacity[i];
        out
    }
}

/// Backpropagates through [`spawn_gaussians`].
///
/// `grads` are w.r.t. the spawned primitives; `d_offsets` (optional) are
/// extra gradients on the clamped offsets. Returns the gradient on the raw
/// texture and on the anchor points.
pub fn spawn_backward(
    texture: &GaussianTextureMap,
    set: &GaussianSet,
    gamma: f64,
    grads: &GaussianGrads,
    d_offsets: Option<&[Vec3]>,
) -> Result<(GaussianTextureMap, Vec<Vec3>)> {
    if grads.len() != set.len() {
        return Err(Error::Shape("gradient count differs from Gaussian count".into()));
    }
    let mut d_tex = GaussianTextureMap::zeros(texture.height, texture.width);
    for i in 0..set.len() {
        let raw = texture.texel(set.texels[i]);
        let g = &set.gaussians[i];
        let out = d_tex.texel_mut(set.texels[i]);
        let mut d_off = grads.position[i];
        if let Some(extra) = d_offsets {
            d_off += extra[i];
        }
        for k in 0..3 {
            if raw[CH_DELTA + k].abs() <= gamma {
                out[CH_DELTA + k] += d_off[k];
            }
        }
        let q = [raw[CH_ROTATION], raw[CH_ROTATION + 1], raw[CH_ROTATION + 2], raw[CH_ROTATION + 3]];
        let dq = normalize_quat_backward(q, grads.rotation[i]);
        for k in 0..4 {
            out[CH_ROTATION + k] += dq[k];
        }
        for k in 0..3 {
            let e = raw[CH_SCALE + k].exp();
            if (MIN_SCALE..=MAX_SCALE).contains(&e) {
                out[CH_SCALE + k] += grads.scale[i][k] * e;
            }
            let c = g.color[k];
            out[CH_COLOR + k] += grads.color[i][k] * c * (1.0 - c);
        }
        out[CH_OPACITY] += grads.opacity[i] * g.opacity * (1.0 - g.opacity);
    }
    Ok((d_tex, grads.position.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{hair_mesh, uv_triangle, HairStyle};
    use proptest::prelude::*;

    fn full_square() -> TemplateMesh {
        let mut m = uv_triangle([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        m.vertices.push(Vec3::new(1.0, 1.0, 0.0));
        m.labels.push(1.0);
        m.faces.push([1, 3, 2]);
        m.uvs.push([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        m
    }

    #[test]
    fn full_coverage_rig_binds_every_texel() {
        // UVs must stay inside [0,1]^2, so full coverage takes two triangles
        let rig = build_uv_rig(&full_square(), 2).unwrap();
        assert_eq!(rig.valid_count(), 4);
        for (_, b) in rig.valid_texels() {
            assert!((b.bary.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(b.bary.iter().all(|&x| x >= 0.0));
        }
        assert_eq!(build_uv_rig(&full_square(), 16).unwrap().valid_count(), 256);
    }

    #[test]
    fn texels_on_shared_edges_go_to_lowest_face() {
        // texel centers (0.25, 0.75) and (0.75, 0.25) lie on the diagonal
        let rig = build_uv_rig(&full_square(), 2).unwrap();
        assert_eq!(rig.bindings[1].unwrap().face, 0);
        assert_eq!(rig.bindings[2].unwrap().face, 0);
        assert_eq!(rig.bindings[3].unwrap().face, 1);
        let half = uv_triangle([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(build_uv_rig(&half, 2).unwrap().valid_count(), 3);
    }

    #[test]
    fn empty_layout_is_rejected() {
        let mut m = full_square();
        m.uvs.clear();
        assert!(matches!(build_uv_rig(&m, 4), Err(Error::Config(_))));
        assert!(matches!(build_uv_rig(&full_square(), 0), Err(Error::Config(_))));
    }

    /// Independent scanline count of texel centers inside a UV triangle.
    fn scanline_count(tri: [[f64; 2]; 3], res: usize) -> usize {
        let mut count = 0;
        for row in 0..res {
            let v = (row as f64 + 0.5) / res as f64;
            let mut xs = Vec::new();
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                if (a[1] <= v && b[1] > v) || (b[1] <= v && a[1] > v) {
                    xs.push(a[0] + (v - a[1]) / (b[1] - a[1]) * (b[0] - a[0]));
                }
            }
            if xs.len() == 2 {
                let (lo, hi) = (xs[0].min(xs[1]), xs[0].max(xs[1]));
                count += (0..res)
                    .filter(|&c| {
                        let u = (c as f64 + 0.5) / res as f64;
                        u >= lo && u <= hi
                    })
                    .count();
            }
        }
        count
    }

    #[test]
    fn half_coverage_matches_scanline_oracle() {
        let tri = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let rig = build_uv_rig(&uv_triangle(tri), 256).unwrap();
        let oracle = scanline_count(tri, 256);
        assert_eq!(rig.valid_count(), oracle);
        let frac = oracle as f64 / (256.0 * 256.0);
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
        let skew = [[0.1, 0.05], [0.93, 0.4], [0.3, 0.97]];
        let rig = build_uv_rig(&uv_triangle(skew), 97).unwrap();
        assert_eq!(rig.valid_count(), scanline_count(skew, 97));
    }

    #[test]
    fn surface_points_corners_and_centroid() {
        let mut m = uv_triangle([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        m.vertices = vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(-4.0, 0.0, 1.0), Vec3::new(0.5, 7.0, -2.0)];
        let mut rig = build_uv_rig(&m, 1).unwrap();
        rig.bindings[0] = Some(TexelBinding { face: 0, bary: [1.0, 0.0, 0.0] });
        assert_eq!(surface_points(&rig, &m.vertices).unwrap()[0], m.vertices[0]);
        rig.bindings[0] = Some(TexelBinding { face: 0, bary: [1.0 / 3.0; 3] });
        let c = (m.vertices[0] + m.vertices[1] + m.vertices[2]) / 3.0;
        assert!((surface_points(&rig, &m.vertices).unwrap()[0] - c).norm() < 1e-12);
        assert!(matches!(surface_points(&rig, &m.vertices[..2]), Err(Error::Shape(_))));
    }

    #[test]
    fn surface_points_follow_deformation_linearly() {
        let m = hair_mesh(6, 12, &HairStyle::default());
        let d = hair_mesh(6, 12, &HairStyle { length: 0.2, flare: 0.2, volume: 0.1, back_length: 0.0 });
        let rig = build_uv_rig(&m, 16).unwrap();
        let pa = surface_points(&rig, &m.vertices).unwrap();
        let pb = surface_points(&rig, &d.vertices).unwrap();
        let mid: Vec<Vec3> = m.vertices.iter().zip(&d.vertices).map(|(a, b)| 0.25 * a + 0.75 * b).collect();
        let pm = surface_points(&rig, &mid).unwrap();
        for i in 0..pa.len() {
            let (_, b) = rig.valid_texels().nth(i).unwrap();
            let f = rig.faces[b.face];
            let direct = (0..3).map(|k| mid[f[k]] * b.bary[k]).sum::<Vec3>();
            assert!((pm[i] - direct).norm() < 1e-12);
            assert!((pm[i] - (0.25 * pa[i] + 0.75 * pb[i])).norm() < 1e-9);
        }
    }

    #[test]
    fn zero_texel_spawns_default_gaussian() {
        let m = full_square();
        let rig = build_uv_rig(&m, 4).unwrap();
        let tex = GaussianTextureMap::zeros(4, 4);
        let set = spawn_gaussians(&tex, &rig, &m.vertices, FACE_GAMMA, PartLabel::Face).unwrap();
        let anchors = surface_points(&rig, &m.vertices).unwrap();
        assert_eq!(set.len(), 16);
        for (g, a) in set.gaussians.iter().zip(&anchors) {
            assert_eq!(g.position, *a);
            assert_eq!(g.rotation, [1.0, 0.0, 0.0, 0.0]);
            assert_eq!(g.scale, Vec3::new(1.0, 1.0, 1.0));
            assert_eq!(g.color, [0.5; 3]);
            assert_eq!(g.opacity, 0.5);
            assert_eq!(g.label, PartLabel::Face);
        }
    }

    #[test]
    fn large_delta_is_clamped_to_gamma() {
        let m = full_square();
        let rig = build_uv_rig(&m, 1).unwrap();
        let mut tex = GaussianTextureMap::zeros(1, 1);
        tex.texel_mut(0)[0] = 100.0;
        let set = spawn_gaussians(&tex, &rig, &m.vertices, 40.0, PartLabel::Face).unwrap();
        assert_eq!(set.offsets[0], Vec3::new(40.0, 0.0, 0.0));
        assert_eq!(set.raw_deltas[0], Vec3::new(100.0, 0.0, 0.0));
    }

    #[test]
    fn full_resolution_two_parts_gives_131072_gaussians() {
        let m = full_square();
        let rig = build_uv_rig(&m, 256).unwrap();
        let tex = GaussianTextureMap::zeros(256, 256);
        let face = spawn_gaussians(&tex, &rig, &m.vertices, FACE_GAMMA, PartLabel::Face).unwrap();
        let hair = spawn_gaussians(&tex, &rig, &m.vertices, HAIR_GAMMA, PartLabel::Hair).unwrap();
        assert_eq!(face.len(), 65536);
        assert_eq!(GaussianSet::concat(&[&face, &hair]).len(), 131072);
    }

    #[test]
    fn spawn_errors() {
        let m = full_square();
        let rig = build_uv_rig(&m, 4).unwrap();
        let mut tex = GaussianTextureMap::zeros(4, 4);
        assert!(matches!(
            spawn_gaussians(&GaussianTextureMap::zeros(3, 3), &rig, &m.vertices, 40.0, PartLabel::Face),
            Err(Error::Shape(_))
        ));
        tex.data[5] = f64::NAN;
        assert!(matches!(
            spawn_gaussians(&tex, &rig, &m.vertices, 40.0, PartLabel::Face),
            Err(Error::Numeric(_))
        ));
    }

    /// Loss = sum of weights times every activated parameter.
    fn weighted(set: &GaussianSet, w: &[f64]) -> f64 {
        let mut s = 0.0;
        for (i, g) in set.gaussians.iter().enumerate() {
            let vals: Vec<f64> = g
                .position
                .iter()
                .copied()
                .chain(g.rotation)
                .chain(g.scale.iter().copied())
                .chain(g.color)
                .chain([g.opacity])
                .collect();
            s += vals.iter().zip(&w[i * 14..]).map(|(a, b)| a * b).sum::<f64>();
        }
        s
    }

    #[test]
    fn spawn_backward_matches_finite_differences() {
        let m = full_square();
        let rig = build_uv_rig(&m, 3).unwrap();
        let n = rig.valid_count();
        let mut tex = GaussianTextureMap::zeros(3, 3);
        for (i, v) in tex.data.iter_mut().enumerate() {
            *v = ((i * 37 % 23) as f64 / 23.0 - 0.5) * 1.5;
        }
        tex.texel_mut(0)[1] = 30.0; // clamped channel: zero gradient
        let w: Vec<f64> = (0..n * 14).map(|i| ((i * 53 % 31) as f64 / 31.0) - 0.4).collect();
        let set = spawn_gaussians(&tex, &rig, &m.vertices, 20.0, PartLabel::Hair).unwrap();
        let mut grads = GaussianGrads::zeros(n);
        for i in 0..n {
            let c = &w[i * 14..];
            grads.position[i] = Vec3::new(c[0], c[1], c[2]);
            grads.rotation[i] = [c[3], c[4], c[5], c[6]];
            grads.scale[i] = Vec3::new(c[7], c[8], c[9]);
            grads.color[i] = [c[10], c[11], c[12]];
            grads.opacity[i] = c[13];
        }
        let (d_tex, _) = spawn_backward(&tex, &set, 20.0, &grads, None).unwrap();
        for j in 0..tex.data.len() {
            let h = 1e-6;
            let mut tp = tex.clone();
            let mut tm = tex.clone();
            tp.data[j] += h;
            tm.data[j] -= h;
            let fp = weighted(&spawn_gaussians(&tp, &rig, &m.vertices, 20.0, PartLabel::Hair).unwrap(), &w);
            let fm = weighted(&spawn_gaussians(&tm, &rig, &m.vertices, 20.0, PartLabel::Hair).unwrap(), &w);
            let fd = (fp - fm) / (2.0 * h);
            let rel = (fd - d_tex.data[j]).abs() / fd.abs().max(1e-8);
            assert!(rel < 1e-4 || (fd - d_tex.data[j]).abs() < 1e-9, "channel {j}: fd {fd} vs {}", d_tex.data[j]);
        }
        assert_eq!(d_tex.texel(0)[1], 0.0);
    }

    proptest! {
        #[test]
        fn spawned_gaussians_satisfy_invariants(
            raw in prop::collection::vec(-60.0f64..60.0, 16 * 14),
            gamma in 1.0f64..50.0,
        ) {
            let m = full_square();
            let rig = build_uv_rig(&m, 4).unwrap();
            let tex = GaussianTextureMap::from_data(4, 4, raw).unwrap();
            let before = tex.clone();
            let set = spawn_gaussians(&tex, &rig, &m.vertices, gamma, PartLabel::Hair).unwrap();
            prop_assert_eq!(&tex, &before);
            prop_assert_eq!(set.len(), rig.valid_count());
            for (i, g) in set.gaussians.iter().enumerate() {
                g.validate().unwrap();
                prop_assert!((g.position - set.anchors[i]).amax() <= gamma + 1e-12);
                prop_assert_eq!(g.label, PartLabel::Hair);
            }
            let mut sorted = set.texels.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, set.texels.clone());
        }
    }
}
