//! Differentiable label rasterization of triangle meshes.
//!
//! Each part is rasterized hard with a z-buffer. Near the part's screen
//! outline the coverage is softened with a smoothstep of the signed distance
//! to the nearest outline edge, so the image depends smoothly on vertex
//! positions inside a band of `softness` pixels and equals the hard raster
//! everywhere else. Parts are then composited front to back per pixel.
//! Visibility changes between parts carry no gradient.

use rayon::prelude::*;

use crate::camera::{CameraPose, NEAR_PLANE};
use crate::error::{ensure_finite, Error, Result};
use crate::math::Vec3;
use crate::mesh::TemplateMesh;

pub const DEFAULT_SOFTNESS: f64 = 1.5;

const BAND_ROWS: usize = 8;
const GRID_CELL: f64 = 8.0;
const PROBE_OFFSET: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Edge {
    a: usize,
    b: usize,
    /// Opposite corners of the adjacent faces (first two).
    faces: [usize; 2],
    count: usize,
}

/// Face list plus edge adjacency, shared by every render of one topology.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshTopology {
    pub faces: Vec<[usize; 3]>,
    pub vertex_count: usize,
    edges: Vec<Edge>,
}

impl MeshTopology {
    pub fn new(faces: Vec<[usize; 3]>, vertex_count: usize) -> Result<Self> {
        if faces.iter().flatten().any(|&i| i >= vertex_count) {
            return Err(Error::Shape("face index out of range".into()));
        }
        let mut keyed: Vec<((usize, usize), usize)> = faces
            .iter()
            .enumerate()
            .flat_map(|(fi, f)| (0..3).map(move |k| ((f[k].min(f[(k + 1) % 3]), f[k].max(f[(k + 1) % 3])), fi)))
            .collect();
        keyed.sort_unstable();
        let mut edges = Vec::new();
        let mut i = 0;
        while i < keyed.len() {
            let mut j = i;
            while j < keyed.len() && keyed[j].0 == keyed[i].0 {
                j += 1;
            }
            let (a, b) = keyed[i].0;
            let f0 = keyed[i].1;
            let f1 = if j - i > 1 { keyed[i + 1].1 } else { f0 };
            edges.push(Edge {
                a,
                b,
                faces: [f0, f1],
                count: j - i,
            });
            i = j;
        }
        Ok(Self {
            faces,
            vertex_count,
            edges,
        })
    }

    pub fn from_mesh(mesh: &TemplateMesh) -> Result<Self> {
        Self::new(mesh.faces.clone(), mesh.vertices.len())
    }
}

/// The constant scalar label of a mesh part.
pub fn part_label(mesh: &TemplateMesh) -> Result<f64> {
    let first = *mesh.labels.first().ok_or_else(|| Error::Config("mesh has no vertices".into()))?;
    if mesh.labels.iter().any(|&l| l != first) {
        return Err(Error::Config("mesh labels must be constant per part".into()));
    }
    Ok(first)
}

#[derive(Debug, Clone, Copy)]
pub struct MeshPart<'a> {
    pub vertices: &'a [Vec3],
    pub topology: &'a MeshTopology,
    pub label: f64,
}

/// Mesh parts rendered together; the background value is 0.
#[derive(Debug, Clone, Default)]
pub struct LabeledMeshScene<'a> {
    pub parts: Vec<MeshPart<'a>>,
}

impl<'a> LabeledMeshScene<'a> {
    pub fn new() -> Self {
        Self { parts: Vec::new() }
    }

    pub fn with_part(mut self, vertices: &'a [Vec3], topology: &'a MeshTopology, label: f64) -> Self {
        self.parts.push(MeshPart {
            vertices,
            topology,
            label,
        });
        self
    }

    fn validate(&self) -> Result<()> {
        for (k, p) in self.parts.iter().enumerate() {
            if p.vertices.len() != p.topology.vertex_count {
                return Err(Error::Shape(format!(
                    "part {k}: {} vertices, topology expects {}",
                    p.vertices.len(),
                    p.topology.vertex_count
                )));
            }
            if !p.label.is_finite() {
                return Err(Error::Data(format!("part {k}: label is not finite")));
            }
            if p.vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
                return Err(Error::Numeric(format!("part {k}: non-finite vertex")));
            }
            let degenerate = p.topology.faces.iter().all(|f| {
                let [a, b, c] = f.map(|i| p.vertices[i]);
                (b - a).cross(&(c - a)).norm() <= 1e-12
            });
            if degenerate {
                return Err(Error::Render(format!("part {k}: every face is degenerate")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelImage {
    pub width: usize,
    pub height: usize,
    /// Soft label render, row-major `H x W`.
    pub values: Vec<f64>,
    /// Hard z-buffered label render.
    pub hard: Vec<f64>,
}

impl LabelImage {
    /// Foreground (nonzero label) pixels of the hard render.
    pub fn hard_foreground(&self) -> Vec<bool> {
        self.hard.iter().map(|&v| v != 0.0).collect()
    }
}

/// Intersection over union of two binary masks; 1 when both are empty.
pub fn mask_iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, Copy)]
struct ScreenVertex {
    p: [f64; 2],
    z: f64,
}

#[derive(Debug, Clone, Copy)]
struct EdgeHit {
    edge: usize,
    t: f64,
    dist: f64,
    q: [f64; 2],
}

struct PartRaster {
    screen: Vec<Option<ScreenVertex>>,
    /// Outline edges as `(a, b)` vertex pairs.
    outline: Vec<(usize, usize)>,
    depth: Vec<f64>,
    hits: Vec<Option<EdgeHit>>,
}

fn cross2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn sub2(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

/// Screen-space triangle with signed doubled area.
struct ScreenTri {
    p: [[f64; 2]; 3],
    inv_z: [f64; 3],
    area2: f64,
}

impl ScreenTri {
    fn new(f: &[usize; 3], screen: &[Option<ScreenVertex>]) -> Option<Self> {
        let [a, b, c] = [screen[f[0]]?, screen[f[1]]?, screen[f[2]]?];
        let area2 = cross2(sub2(b.p, a.p), sub2(c.p, a.p));
        (area2.abs() > 1e-12).then_some(Self {
            p: [a.p, b.p, c.p],
            inv_z: [1.0 / a.z, 1.0 / b.z, 1.0 / c.z],
            area2,
        })
    }

    /// Camera depth at `p` if the point lies inside (boundary included).
    fn depth_at(&self, p: [f64; 2]) -> Option<f64> {
        let [a, b, c] = self.p;
        let w0 = cross2(sub2(c, b), sub2(p, b)) / self.area2;
        let w1 = cross2(sub2(a, c), sub2(p, c)) / self.area2;
        let w2 = cross2(sub2(b, a), sub2(p, a)) / self.area2;
        (w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0).then(|| 1.0 / (w0 * self.inv_z[0] + w1 * self.inv_z[1] + w2 * self.inv_z[2]))
    }

    fn bbox(&self) -> [f64; 4] {
        let xs = self.p.map(|q| q[0]);
        let ys = self.p.map(|q| q[1]);
        [
            xs.iter().copied().fold(f64::INFINITY, f64::min),
            xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ys.iter().copied().fold(f64::INFINITY, f64::min),
            ys.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ]
    }
}

/// Uniform grid of triangles for point-coverage queries.
struct FaceGrid {
    origin: [f64; 2],
    nx: usize,
    ny: usize,
    cells: Vec<Vec<u32>>,
}

impl FaceGrid {
    fn new(tris: &[Option<ScreenTri>], width: usize, height: usize, margin: f64) -> Self {
        let origin = [-margin, -margin];
        let nx = ((width as f64 + 2.0 * margin) / GRID_CELL).ceil() as usize;
        let ny = ((height as f64 + 2.0 * margin) / GRID_CELL).ceil() as usize;
        let mut cells = vec![Vec::new(); nx * ny];
        for (fi, t) in tris.iter().enumerate() {
            let Some(t) = t else { continue };
            let [x0, x1, y0, y1] = t.bbox();
            let cx = |x: f64| (((x - origin[0]) / GRID_CELL).floor().max(0.0) as usize).min(nx - 1);
            let cy = |y: f64| (((y - origin[1]) / GRID_CELL).floor().max(0.0) as usize).min(ny - 1);
            if x1 < origin[0] || y1 < origin[1] || x0 > origin[0] + (nx as f64) * GRID_CELL || y0 > origin[1] + (ny as f64) * GRID_CELL {
                continue;
            }
            for j in cy(y0)..=cy(y1) {
                for i in cx(x0)..=cx(x1) {
                    cells[j * nx + i].push(fi as u32);
                }
            }
        }
        Self { origin, nx, ny, cells }
    }

    fn covered(&self, tris: &[Option<ScreenTri>], p: [f64; 2]) -> bool {
        let i = ((p[0] - self.origin[0]) / GRID_CELL).floor();
        let j = ((p[1] - self.origin[1]) / GRID_CELL).floor();
        if i < 0.0 || j < 0.0 || i >= self.nx as f64 || j >= self.ny as f64 {
            return tris.iter().flatten().any(|t| t.depth_at(p).is_some());
        }
        self.cells[j as usize * self.nx + i as usize]
            .iter()
            .any(|&fi| tris[fi as usize].as_ref().is_some_and(|t| t.depth_at(p).is_some()))
    }
}

fn row_bands(height: usize) -> Vec<(usize, usize)> {
    (0..height.div_ceil(BAND_ROWS))
        .map(|b| (b * BAND_ROWS, ((b + 1) * BAND_ROWS).min(height)))
        .collect()
}

fn pixel_range(lo: f64, hi: f64, n: usize) -> Option<(usize, usize)> {
    // pixel centers c + 0.5 inside [lo, hi]
    let a = (lo - 0.5).ceil().max(0.0);
    let b = (hi - 0.5).floor().min(n as f64 - 1.0);
    (a <= b).then_some((a as usize, b as usize))
}

fn closest_on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> (f64, [f64; 2], f64) {
    let ab = sub2(b, a);
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * ab[0], a[1] + t * ab[1]];
    let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
    (t, q, d)
}

fn rasterize_part(part: &MeshPart, camera: &CameraPose, width: usize, height: usize, softness: f64) -> PartRaster {
    let (fx, fy) = camera.focal_px(width, height);
    let (cx, cy) = camera.principal_px(width, height);
    let screen: Vec<Option<ScreenVertex>> = part
        .vertices
        .iter()
        .map(|v| {
            let t = camera.world_to_camera(v);
            (t.z > NEAR_PLANE).then(|| ScreenVertex {
                p: [fx * t.x / t.z + cx, fy * t.y / t.z + cy],
                z: t.z,
            })
        })
        .collect();
    let tris: Vec<Option<ScreenTri>> = part.topology.faces.iter().map(|f| ScreenTri::new(f, &screen)).collect();
    let grid = FaceGrid::new(&tris, width, height, softness + 2.0);

    // outline edges: boundary edges and orientation folds, kept only where
    // the far side of the edge is actually uncovered
    let faces = &part.topology.faces;
    let outline: Vec<(usize, usize)> = part
        .topology
        .edges
        .iter()
        .filter_map(|e| {
            let t0 = tris[e.faces[0]].as_ref()?;
            let fold = e.count == 1 || tris[e.faces[1]].as_ref().is_some_and(|t1| (t1.area2 > 0.0) != (t0.area2 > 0.0));
            if !fold {
                return None;
            }
            let (a, b) = (screen[e.a]?.p, screen[e.b]?.p);
            let lo_x = a[0].min(b[0]) - softness;
            let hi_x = a[0].max(b[0]) + softness;
            let lo_y = a[1].min(b[1]) - softness;
            let hi_y = a[1].max(b[1]) + softness;
            if hi_x < 0.0 || hi_y < 0.0 || lo_x > width as f64 || lo_y > height as f64 {
                return None;
            }
            let third = faces[e.faces[0]].iter().copied().find(|&v| v != e.a && v != e.b)?;
            let c = screen[third]?.p;
            let ab = sub2(b, a);
            let len = (ab[0] * ab[0] + ab[1] * ab[1]).sqrt();
            if len == 0.0 {
                return None;
            }
            let mut n = [-ab[1] / len, ab[0] / len];
            if n[0] * (c[0] - a[0]) + n[1] * (c[1] - a[1]) > 0.0 {
                n = [-n[0], -n[1]];
            }
            let open = [0.25, 0.5, 0.75].iter().any(|&t| {
                let probe = [a[0] + t * ab[0] + PROBE_OFFSET * n[0], a[1] + t * ab[1] + PROBE_OFFSET * n[1]];
                !grid.covered(&tris, probe)
            });
            open.then_some((e.a, e.b))
        })
        .collect();

    let bands = row_bands(height);
    let band_out: Vec<(Vec<f64>, Vec<Option<EdgeHit>>)> = bands
        .par_iter()
        .map(|&(y0, y1)| {
            let n = (y1 - y0) * width;
            let mut depth = vec![f64::INFINITY; n];
            let mut hits: Vec<Option<EdgeHit>> = vec![None; n];
            for t in tris.iter().flatten() {
                let [bx0, bx1, by0, by1] = t.bbox();
                let (Some((px0, px1)), Some((py0, py1))) = (pixel_range(bx0, bx1, width), pixel_range(by0.max(y0 as f64), by1.min(y1 as f64), height)) else {
                    continue;
                };
                for py in py0.max(y0)..=py1.min(y1 - 1) {
                    for px in px0..=px1 {
                        if let Some(z) = t.depth_at([px as f64 + 0.5, py as f64 + 0.5]) {
                            let slot = &mut depth[(py - y0) * width + px];
                            if z < *slot {
                                *slot = z;
                            }
                        }
                    }
                }
            }
            for (ei, &(va, vb)) in outline.iter().enumerate() {
                let (a, b) = (screen[va].unwrap().p, screen[vb].unwrap().p);
                let (Some((px0, px1)), Some((py0, py1))) = (
                    pixel_range(a[0].min(b[0]) - softness, a[0].max(b[0]) + softness, width),
                    pixel_range((a[1].min(b[1]) - softness).max(y0 as f64), (a[1].max(b[1]) + softness).min(y1 as f64), height),
                ) else {
                    continue;
                };
                for py in py0.max(y0)..=py1.min(y1 - 1) {
                    for px in px0..=px1 {
                        let p = [px as f64 + 0.5, py as f64 + 0.5];
                        let (t, q, dist) = closest_on_segment(p, a, b);
                        if dist >= softness {
                            continue;
                        }
                        let slot = &mut hits[(py - y0) * width + px];
                        if slot.is_none_or(|h| dist < h.dist) {
                            *slot = Some(EdgeHit { edge: ei, t, dist, q });
                        }
                    }
                }
            }
            (depth, hits)
        })
        .collect();
    let mut depth = Vec::with_capacity(width * height);
    let mut hits = Vec::with_capacity(width * height);
    for (d, h) in band_out {
        depth.extend(d);
        hits.extend(h);
    }
    PartRaster {
        screen,
        outline,
        depth,
        hits,
    }
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

fn smoothstep_slope(u: f64) -> f64 {
    if u <= 0.0 || u >= 1.0 {
        0.0
    } else {
        6.0 * u * (1.0 - u)
    }
}

/// One part's soft coverage at a pixel.
#[derive(Debug, Clone, Copy)]
struct Layer {
    part: usize,
    coverage: f64,
    depth: f64,
    /// `u` of the smoothstep and its sign w.r.t. distance, when soft.
    soft: Option<(f64, f64)>,
}

fn pixel_layers(rasters: &[PartRaster], idx: usize, softness: f64, layers: &mut Vec<Layer>) {
    layers.clear();
    for (k, r) in rasters.iter().enumerate() {
        let covered = r.depth[idx].is_finite();
        let layer = match r.hits[idx] {
            Some(h) => {
                let sign = if covered { 1.0 } else { -1.0 };
                let u = 0.5 + sign * h.dist / (2.0 * softness);
                let depth = if covered {
                    r.depth[idx]
                } else {
                    let (a, b) = r.outline[h.edge];
                    let (za, zb) = (r.screen[a].unwrap().z, r.screen[b].unwrap().z);
                    za + h.t * (zb - za)
                };
                Layer {
                    part: k,
                    coverage: smoothstep(u),
                    depth,
                    soft: Some((u, sign)),
                }
            }
            None if covered => Layer {
                part: k,
                coverage: 1.0,
                depth: r.depth[idx],
                soft: None,
            },
            None => continue,
        };
        if layer.coverage > 0.0 {
            layers.push(layer);
        }
    }
    layers.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.part.cmp(&b.part)));
}

fn composite(layers: &[Layer], labels: &[f64]) -> f64 {
    let mut value = 0.0;
    let mut t = 1.0;
    for l in layers {
        value += t * l.coverage * labels[l.part];
        t *= 1.0 - l.coverage;
    }
    value
}

fn hard_label(rasters: &[PartRaster], idx: usize, labels: &[f64]) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    for (k, r) in rasters.iter().enumerate() {
        if r.depth[idx] < best.0 {
            best = (r.depth[idx], labels[k]);
        }
    }
    best.1
}

fn prepare(scene: &LabeledMeshScene, camera: &CameraPose, width: usize, height: usize, softness: f64) -> Result<Vec<PartRaster>> {
    if width == 0 || height == 0 {
        return Err(Error::Render(format!("image size {width}x{height} is empty")));
    }
    if !(softness > 0.0 && softness.is_finite()) {
        return Err(Error::Config(format!("softness must be positive, got {softness}")));
    }
    camera.validate()?;
    scene.validate()?;
    Ok(scene.parts.iter().map(|p| rasterize_part(p, camera, width, height, softness)).collect())
}

/// Renders the scalar label image of `scene`.
pub fn render_mesh_labels(scene: &LabeledMeshScene, camera: &CameraPose, width: usize, height: usize, softness: f64) -> Result<LabelImage> {
    let rasters = prepare(scene, camera, width, height, softness)?;
    let labels: Vec<f64> = scene.parts.iter().map(|p| p.label).collect();
    let (values, hard): (Vec<f64>, Vec<f64>) = (0..width * height)
        .into_par_iter()
        .map_init(Vec::new, |layers, idx| {
            pixel_layers(&rasters, idx, softness, layers);
            (composite(layers, &labels), hard_label(&rasters, idx, &labels))
        })
        .unzip();
    Ok(LabelImage {
        width,
        height,
        values,
        hard,
    })
}

/// Gradient of `Σ d_values · values` w.r.t. every vertex of every part.
pub fn render_mesh_labels_backward(
    scene: &LabeledMeshScene,
    camera: &CameraPose,
    width: usize,
    height: usize,
    softness: f64,
    d_values: &[f64],
) -> Result<Vec<Vec<Vec3>>> {
    if d_values.len() != width * height {
        return Err(Error::Shape(format!("gradient has {} values, expected {}", d_values.len(), width * height)));
    }
    ensure_finite(d_values, "label image gradient")?;
    let rasters = prepare(scene, camera, width, height, softness)?;
    let labels: Vec<f64> = scene.parts.iter().map(|p| p.label).collect();

    // screen-space gradients per part vertex, accumulated per band
    let bands = row_bands(height);
    let partials: Vec<Vec<Vec<[f64; 2]>>> = bands
        .par_iter()
        .map(|&(y0, y1)| {
            let mut acc: Vec<Vec<[f64; 2]>> = scene.parts.iter().map(|p| vec![[0.0; 2]; p.vertices.len()]).collect();
            let mut layers = Vec::new();
            for idx in y0 * width..y1 * width {
                let g = d_values[idx];
                if g == 0.0 {
                    continue;
                }
                pixel_layers(&rasters, idx, softness, &mut layers);
                // value behind each layer, composited back to front
                let mut behind = 0.0;
                let mut behind_list = vec![0.0; layers.len()];
                for (i, l) in layers.iter().enumerate().rev() {
                    behind_list[i] = behind;
                    behind = l.coverage * labels[l.part] + (1.0 - l.coverage) * behind;
                }
                let mut t = 1.0;
                for (i, l) in layers.iter().enumerate() {
                    if let Some((u, sign)) = l.soft {
                        let d_cov = g * t * (labels[l.part] - behind_list[i]);
                        let d_dist = d_cov * smoothstep_slope(u) * sign / (2.0 * softness);
                        let h = rasters[l.part].hits[idx].unwrap();
                        if d_dist != 0.0 && h.dist > 0.0 {
                            let p = [(idx % width) as f64 + 0.5, (idx / width) as f64 + 0.5];
                            let nh = [(p[0] - h.q[0]) / h.dist, (p[1] - h.q[1]) / h.dist];
                            let (va, vb) = rasters[l.part].outline[h.edge];
                            for (v, w) in [(va, 1.0 - h.t), (vb, h.t)] {
                                acc[l.part][v][0] -= d_dist * w * nh[0];
                                acc[l.part][v][1] -= d_dist * w * nh[1];
                            }
                        }
                    }
                    t *= 1.0 - l.coverage;
                }
            }
            acc
        })
        .collect();

    let (fx, fy) = camera.focal_px(width, height);
    let rot = camera.rotation();
    let mut out = Vec::with_capacity(scene.parts.len());
    for (k, part) in scene.parts.iter().enumerate() {
        let mut d_screen = vec![[0.0; 2]; part.vertices.len()];
        for band in &partials {
            for (acc, g) in d_screen.iter_mut().zip(&band[k]) {
                acc[0] += g[0];
                acc[1] += g[1];
            }
        }
        let grads = part
            .vertices
            .iter()
            .zip(&d_screen)
            .map(|(v, ds)| {
                if ds[0] == 0.0 && ds[1] == 0.0 {
                    return Vec3::zeros();
                }
                let t = camera.world_to_camera(v);
                let d_t = Vec3::new(ds[0] * fx / t.z, ds[1] * fy / t.z, -(ds[0] * fx * t.x + ds[1] * fy * t.y) / (t.z * t.z));
                rot.transpose() * d_t
            })
            .collect();
        out.push(grads);
    }
    Ok(out)
}
