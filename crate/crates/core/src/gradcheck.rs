//! Finite-difference checks of every analytic gradient in the crate.
//!
//! Each check perturbs inputs one at a time with central differences and
//! compares against the analytic reverse pass on a random scalar
//! projection of the output. Entries whose finite difference is below the
//! check's floor are skipped.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::CameraPose;
use crate::error::{Error, Result};
use crate::hair::{blend_hair_shape, blend_hair_shape_backward, build_blend_model, JacobianField, PoissonSolver};
use crate::harness::{random_texture, HeadRig, RigSpec};
use crate::losses::{l_pos_reg, l_scale_reg, l_seg, l_seg_mesh, l_uv_tv, LossWeights};
use crate::math::{normalize_quat, Vec3};
use crate::mesh::{hair_mesh, HairStyle};
use crate::net::{
    discriminator_backward, discriminator_forward, r1_parameter_gradient, sample_latent, DiscriminatorConfig, GeneratorGraph,
    NetConfig, NetParams, SynthesisConfig,
};
use crate::render::{render, render_backward, RenderGrads, RenderOptions, RenderOutput};
use crate::scene::{spawn_backward, spawn_gaussians, GaussianGrads, GaussianPrimitive, GaussianSet, GaussianTextureMap, PartLabel};
use crate::silhouette::{render_mesh_labels, render_mesh_labels_backward, LabeledMeshScene, MeshTopology, DEFAULT_SOFTNESS};

/// Outcome of one gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub tolerance: f64,
    /// Minimum `|FD|` for an entry to be compared.
    pub floor: f64,
    pub checked: usize,
    pub failures: usize,
    pub max_rel_error: f64,
}

impl Check {
    pub fn new(name: &str, tolerance: f64, floor: f64) -> Self {
        Self {
            name: name.to_string(),
            tolerance,
            floor,
            checked: 0,
            failures: 0,
            max_rel_error: 0.0,
        }
    }

    pub fn compare(&mut self, analytic: f64, numeric: f64) {
        if numeric.abs() <= self.floor {
            return;
        }
        let rel = (analytic - numeric).abs() / numeric.abs().max(analytic.abs());
        self.checked += 1;
        self.max_rel_error = self.max_rel_error.max(rel);
        if !(rel <= self.tolerance) {
            self.failures += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.failures == 0
    }

    pub fn merge(&mut self, other: &Check) {
        self.checked += other.checked;
        self.failures += other.failures;
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {} entries, {} failures, max rel error {:.3e} (tol {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.checked,
            self.failures,
            self.max_rel_error,
            self.tolerance
        )
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Random Gaussians in a 5-unit box seen by a camera 10 units away, with
/// opacities below the alpha clamp.
pub fn random_scene(seed: u64, count: usize) -> (GaussianSet, CameraPose) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = [PartLabel::Background, PartLabel::Face, PartLabel::Hair];
    let gaussians = (0..count)
        .map(|_| GaussianPrimitive {
            position: Vec3::from_fn(|_, _| rng.random_range(-2.5..2.5)),
            rotation: normalize_quat(std::array::from_fn(|_| rng.random_range(-1.0..1.0))),
            scale: Vec3::from_fn(|_, _| rng.random_range(0.15..0.8)),
            color: std::array::from_fn(|_| rng.random()),
            opacity: rng.random_range(0.05..0.9),
            label: labels[rng.random_range(0..3)],
        })
        .collect();
    let camera = CameraPose::orbit(rng.random_range(-180.0..180.0), rng.random_range(-20.0..20.0), 10.0, 1.2);
    (GaussianSet::from_primitives(gaussians), camera)
}

/// Differences of two renders restricted to one head, dotted with `w`.
/// Pixels the perturbation does not reach cancel exactly.
fn head_diff(a: &RenderOutput, b: &RenderOutput, head: usize, w: &[f64]) -> f64 {
    let (x, y) = match head {
        0 => (&a.rgb, &b.rgb),
        1 => (&a.mask, &b.mask),
        _ => (&a.seg, &b.seg),
    };
    x.iter().zip(y).zip(w).map(|((p, q), g)| (p - q) * g).sum()
}

const RENDER_STEP: f64 = 1e-5;

/// Rasterizer gradients for every parameter channel of every Gaussian and
/// each output head separately.
pub fn check_renderer(seed: u64, count: usize, size: usize) -> Result<Check> {
    let (set, cam) = random_scene(seed, count);
    let opts = RenderOptions::exact();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n = size * size;
    let mut check = Check::new("renderer", 1e-3, 1e-8);
    for head in 0..3 {
        let w = uniform(&mut rng, if head == 1 { n } else { 3 * n });
        let upstream = RenderGrads {
            rgb: if head == 0 { w.clone() } else { vec![0.0; 3 * n] },
            mask: if head == 1 { w.clone() } else { vec![0.0; n] },
            seg: if head == 2 { w.clone() } else { vec![0.0; 3 * n] },
        };
        let grads = render_backward(&set, &cam, size, size, &opts, &upstream)?;
        for i in 0..set.len() {
            let fd = |bump: &dyn Fn(&mut GaussianPrimitive, f64)| -> Result<f64> {
                let (mut plus, mut minus) = (set.clone(), set.clone());
                bump(&mut plus.gaussians[i], RENDER_STEP);
                bump(&mut minus.gaussians[i], -RENDER_STEP);
                let a = render(&plus, &cam, size, size, &opts)?;
                let b = render(&minus, &cam, size, size, &opts)?;
                Ok(head_diff(&a, &b, head, &w) / (2.0 * RENDER_STEP))
            };
            for k in 0..3 {
                check.compare(grads.position[i][k], fd(&|g, h| g.position[k] += h)?);
                check.compare(grads.scale[i][k], fd(&|g, h| g.scale[k] += h)?);
                check.compare(grads.color[i][k], fd(&|g, h| g.color[k] += h)?);
            }
            for k in 0..4 {
                check.compare(grads.rotation[i][k], fd(&|g, h| g.rotation[k] += h)?);
            }
            check.compare(grads.opacity[i], fd(&|g, h| g.opacity += h)?);
        }
    }
    Ok(check)
}

/// Soft label rasterizer gradients w.r.t. the vertices of two mesh parts.
pub fn check_silhouette(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rig = HeadRig::new(small_rig())?;
    let hair = rig.hair_mesh(&HairStyle {
        length: 0.1,
        ..HairStyle::default()
    });
    let cam = CameraPose::orbit(rng.random_range(-180.0..180.0), 10.0, 160.0, 1.4);
    let size = 24;
    let w = uniform(&mut rng, size * size);
    let topo = MeshTopology::from_mesh(&hair)?;
    let value = |v: &[Vec3]| -> Result<f64> {
        let scene = LabeledMeshScene::new().with_part(&rig.face_mesh.vertices, &rig.face_topology, 1.0).with_part(v, &topo, 2.0);
        Ok(dot(&render_mesh_labels(&scene, &cam, size, size, DEFAULT_SOFTNESS)?.values, &w))
    };
    let scene = LabeledMeshScene::new().with_part(&rig.face_mesh.vertices, &rig.face_topology, 1.0).with_part(&hair.vertices, &topo, 2.0);
    let g = render_mesh_labels_backward(&scene, &cam, size, size, DEFAULT_SOFTNESS, &w)?;
    let mut check = Check::new("silhouette", 1e-2, 1e-6);
    let h = 1e-4;
    for i in 0..hair.vertices.len() {
        for k in 0..3 {
            let (mut p, mut m) = (hair.vertices.clone(), hair.vertices.clone());
            p[i][k] += h;
            m[i][k] -= h;
            check.compare(g[1][i][k], (value(&p)? - value(&m)?) / (2.0 * h));
        }
    }
    Ok(check)
}

fn small_rig() -> RigSpec {
    RigSpec {
        texture_resolution: 8,
        face_rings: 8,
        face_segments: 12,
        hair_rings: 4,
        hair_segments: 8,
    }
}

fn weighted_set(set: &GaussianSet, w: &GaussianGrads) -> f64 {
    let mut s = 0.0;
    for (g, i) in set.gaussians.iter().zip(0..) {
        s += g.position.dot(&w.position[i]) + g.scale.dot(&w.scale[i]) + g.opacity * w.opacity[i];
        s += dot(&g.rotation, &w.rotation[i]) + dot(&g.color, &w.color[i]);
    }
    s
}

/// Texel decoding and surface anchoring: raw texture and hair vertices.
pub fn check_spawn(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rig = HeadRig::new(small_rig())?;
    let verts = rig.hair_template.vertices.clone();
    let (_, prior) = rig.prior_textures(&verts)?;
    let tex = random_texture(&rig.hair_rig, &prior, &mut rng);
    let gamma = 0.5;
    let set = spawn_gaussians(&tex, &rig.hair_rig, &verts, gamma, PartLabel::Hair)?;
    let n = set.len();
    let mut w = GaussianGrads::zeros(n);
    for i in 0..n {
        w.position[i] = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        w.scale[i] = Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        w.rotation[i] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        w.color[i] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        w.opacity[i] = rng.random_range(-1.0..1.0);
    }
    let (d_tex, d_anchor) = spawn_backward(&tex, &set, gamma, &w, None)?;
    let d_verts = crate::scene::surface_points_backward(&rig.hair_rig, &d_anchor);
    let value = |t: &GaussianTextureMap, v: &[Vec3]| -> Result<f64> { Ok(weighted_set(&spawn_gaussians(t, &rig.hair_rig, v, gamma, PartLabel::Hair)?, &w)) };
    let mut check = Check::new("spawn", 1e-5, 1e-8);
    let h = 1e-6;
    for i in (0..tex.data.len()).step_by(3) {
        let (mut p, mut m) = (tex.clone(), tex.clone());
        p.data[i] += h;
        m.data[i] -= h;
        check.compare(d_tex.data[i], (value(&p, &verts)? - value(&m, &verts)?) / (2.0 * h));
    }
    for i in 0..verts.len() {
        for k in 0..3 {
            let (mut p, mut m) = (verts.clone(), verts.clone());
            p[i][k] += h;
            m[i][k] -= h;
            check.compare(d_verts[i][k], (value(&tex, &p)? - value(&tex, &m)?) / (2.0 * h));
        }
    }
    Ok(check)
}

/// Poisson solve adjoint over every field entry of a small hair mesh.
pub fn check_poisson(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mesh = hair_mesh(4, 8, &HairStyle::default());
    let solver = PoissonSolver::new(&mesh)?;
    let faces = solver.face_count();
    let mut flat = JacobianField::identity(faces).to_flat();
    for v in &mut flat {
        *v += rng.random_range(-0.2..0.2);
    }
    let w: Vec<Vec3> = (0..mesh.vertices.len()).map(|_| Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect();
    let value = |f: &[f64]| -> Result<f64> {
        let v = solver.solve(&JacobianField::from_flat(f, faces)?)?;
        Ok(v.iter().zip(&w).map(|(a, b)| a.dot(b)).sum())
    };
    let (d_j, d_t) = solver.solve_backward(&w)?;
    let analytic = JacobianField {
        jacobians: d_j,
        translation: d_t,
    }
    .to_flat();
    let mut check = Check::new("poisson", 1e-6, 1e-8);
    let h = 1e-5;
    for i in 0..flat.len() {
        let (mut p, mut m) = (flat.clone(), flat.clone());
        p[i] += h;
        m[i] -= h;
        check.compare(analytic[i], (value(&p)? - value(&m)?) / (2.0 * h));
    }
    Ok(check)
}

fn fd_vector(check: &mut Check, x: &[f64], analytic: &[f64], h: f64, f: impl Fn(&[f64]) -> f64) {
    for i in 0..x.len() {
        let (mut p, mut m) = (x.to_vec(), x.to_vec());
        p[i] += h;
        m[i] -= h;
        check.compare(analytic[i], (f(&p) - f(&m)) / (2.0 * h));
    }
}

fn to_vec3(x: &[f64]) -> Vec<Vec3> {
    x.chunks_exact(3).map(Vec3::from_column_slice).collect()
}

fn flat3(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|p| p.iter().copied()).collect()
}

/// Smooth loss terms away from their kinks.
pub fn check_losses(seed: u64) -> Result<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut check = Check::new("losses", 1e-6, 1e-8);
    let h = 1e-6;

    let n = 20;
    let target: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
    let seg: Vec<f64> = (0..3 * n).map(|_| rng.random_range(0.05..1.0)).collect();
    let (_, g) = l_seg(&seg, &target)?;
    fd_vector(&mut check, &seg, &g, h, |x| l_seg(x, &target).map(|r| r.0).unwrap_or(f64::NAN));

    let labels: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
    let (_, g) = l_seg_mesh(&labels, &target)?;
    fd_vector(&mut check, &labels, &g, h, |x| l_seg_mesh(x, &target).map(|r| r.0).unwrap_or(f64::NAN));

    let deltas: Vec<f64> = (0..3 * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, g) = l_pos_reg(&to_vec3(&deltas));
    fd_vector(&mut check, &deltas, &flat3(&g), h, |x| l_pos_reg(&to_vec3(x)).0);

    let scales: Vec<f64> = (0..3 * n).map(|_| rng.random_range(0.05..7.0)).collect();
    let (_, g) = l_scale_reg(&to_vec3(&scales));
    fd_vector(&mut check, &scales, &flat3(&g), h, |x| l_scale_reg(&to_vec3(x)).0);

    let r = 4;
    let tex = GaussianTextureMap::from_data(r, r, (0..r * r * 14).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let valid: Vec<bool> = (0..r * r).map(|i| i % 5 != 0).collect();
    let (_, g) = l_uv_tv(&tex, &valid)?;
    fd_vector(&mut check, &tex.data, &g.data, h, |x| {
        let t = GaussianTextureMap::from_data(r, r, x.to_vec()).expect("same size");
        l_uv_tv(&t, &valid).map(|v| v.0).unwrap_or(f64::NAN)
    });
    Ok(check)
}

fn tiny_net(texture_resolution: usize, image_resolution: usize) -> NetConfig {
    let mut s = SynthesisConfig::toy(texture_resolution);
    s.z_dim = 16;
    s.w_dim = 16;
    s.mapping_width = 16;
    s.mapping_layers = 2;
    s.geometry_hidden = 8;
    s.tokens = 4;
    s.num_coeffs = 4;
    s.channels = vec![8; s.channels.len()];
    NetConfig {
        synthesis: s,
        discriminator: DiscriminatorConfig {
            image_resolution,
            base_channels: 4,
            max_channels: 8,
            feature_dim: 8,
        },
    }
}

/// Generator gradients w.r.t. the latent (`generator`, rel 1e-4) and at
/// three entries of every generator tensor (`generator params`, rel 1e-3;
/// leaky-ReLU kinks make single weights noisier).
pub fn check_generator(seed: u64) -> Result<(Check, Check)> {
    let cfg = tiny_net(8, 8);
    let s = &cfg.synthesis;
    let params = NetParams::init(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = sample_latent(&mut rng, s.z_dim);
    let cam = CameraPose::orbit(20.0, 5.0, 160.0, 1.4);
    let len = 8 * 8 * 14;
    let (dh, df) = (uniform(&mut rng, len), uniform(&mut rng, len));
    let dt = uniform(&mut rng, s.num_coeffs);
    let value = |p: &NetParams, z: &[f64]| -> Result<f64> {
        let o = GeneratorGraph::from_latent(p, s, z, &cam, 0.7, false)?.outputs()?;
        Ok(dot(&o.hair.data, &dh) + dot(&o.face.data, &df) + dot(&o.theta, &dt))
    };
    let graph = GeneratorGraph::from_latent(&params, s, &z, &cam, 0.7, false)?;
    let tex = |d: &[f64]| GaussianTextureMap::from_data(8, 8, d.to_vec());
    let g = graph.backward(Some(&tex(&dh)?), Some(&tex(&df)?), Some(&dt))?;
    let mut check = Check::new("generator", 1e-4, 1e-5);
    let mut weights = Check::new("generator params", 1e-3, 1e-5);
    let h = 1e-5;
    let gz = g.z.ok_or_else(|| Error::Usage("latent gradient missing".into()))?;
    for i in 0..s.z_dim {
        let (mut p, mut m) = (z.clone(), z.clone());
        p[i] += h;
        m[i] -= h;
        check.compare(gz[i], (value(&params, &p)? - value(&params, &m)?) / (2.0 * h));
    }
    for i in 0..params.len() {
        if !params.names()[i].starts_with("g.") {
            continue;
        }
        let an = g.params.get(i).map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; params.tensor(i).len()]);
        for k in [0, an.len() / 2, an.len() - 1] {
            let (mut p, mut m) = (params.clone(), params.clone());
            p.tensor_mut(i).data[k] += h;
            m.tensor_mut(i).data[k] -= h;
            weights.compare(an[k], (value(&p, &z)? - value(&m, &z)?) / (2.0 * h));
        }
    }
    Ok((check, weights))
}

/// Discriminator input and parameter gradients, and the R1 parameter
/// gradient.
pub fn check_discriminator(seed: u64) -> Result<Check> {
    let cfg = tiny_net(8, 8);
    let d = &cfg.discriminator;
    let params = NetParams::init(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = d.image_resolution;
    let rgb: Vec<f64> = (0..3 * r * r).map(|_| rng.random()).collect();
    let mask: Vec<f64> = (0..r * r).map(|_| rng.random()).collect();
    let cam = CameraPose::orbit(-40.0, 5.0, 160.0, 1.4);
    let weights = LossWeights {
        r1_rgb: 1.5,
        r1_mask: 0.5,
        ..LossWeights::default()
    };
    let g = discriminator_backward(&params, d, &rgb, &mask, &cam, 1.0)?;
    let mut check = Check::new("discriminator", 1e-4, 1e-8);
    let h = 1e-6;
    let mut joint = rgb.clone();
    joint.extend(&mask);
    let mut analytic = g.rgb.clone();
    analytic.extend(&g.mask);
    let split = rgb.len();
    fd_vector(&mut check, &joint, &analytic, h, |x| {
        discriminator_forward(&params, d, &x[..split], &x[split..], &cam).unwrap_or(f64::NAN)
    });

    let (_, r1) = r1_parameter_gradient(&params, d, &rgb, &mask, &cam, &weights)?;
    let penalty = |p: &NetParams| -> Result<f64> {
        let g = discriminator_backward(p, d, &rgb, &mask, &cam, 1.0)?;
        Ok(0.5 * (weights.r1_rgb * dot(&g.rgb, &g.rgb) + weights.r1_mask * dot(&g.mask, &g.mask)))
    };
    for i in 0..params.len() {
        if !params.names()[i].starts_with("d.") {
            continue;
        }
        let an_score = g.params.get(i).map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; params.tensor(i).len()]);
        let an_r1 = r1.get(i).map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; params.tensor(i).len()]);
        for k in [0, an_score.len() / 2, an_score.len() - 1] {
            let (mut p, mut m) = (params.clone(), params.clone());
            p.tensor_mut(i).data[k] += h;
            m.tensor_mut(i).data[k] -= h;
            let fd = (discriminator_forward(&p, d, &rgb, &mask, &cam)? - discriminator_forward(&m, d, &rgb, &mask, &cam)?) / (2.0 * h);
            check.compare(an_score[k], fd);
            check.compare(an_r1[k], (penalty(&p)? - penalty(&m)?) / (2.0 * h));
        }
    }
    Ok(check)
}

/// Toy generator with the rig, hair model and render size it drives.
pub struct EndToEnd {
    pub net: NetConfig,
    pub params: NetParams,
    pub rig: HeadRig,
    pub blend: crate::hair::HairBlendModel,
    pub camera: CameraPose,
    pub size: usize,
}

impl EndToEnd {
    /// 16×16 textures, 16×16 renders.
    pub fn toy(seed: u64) -> Result<Self> {
        let net = tiny_net(16, 16);
        let rig = HeadRig::new(RigSpec {
            texture_resolution: 16,
            ..small_rig()
        })?;
        let styles = [(0.0, 0.0, 0.0, 0.0), (0.1, 0.2, 0.05, 0.1), (-0.1, 0.1, 0.0, 0.3), (0.05, 0.0, 0.08, 0.0), (0.12, 0.25, -0.02, 0.2)];
        let meshes: Vec<_> = styles
            .iter()
            .map(|&(length, flare, volume, back_length)| rig.hair_mesh(&HairStyle { length, flare, volume, back_length }))
            .collect();
        let blend = build_blend_model(&meshes, net.synthesis.num_coeffs)?;
        let params = NetParams::init(&net, seed)?;
        Ok(Self {
            net,
            params,
            rig,
            blend,
            camera: CameraPose::orbit(30.0, 10.0, 160.0, 2.0),
            size: 16,
        })
    }

    /// Forward render for latent `z`.
    pub fn render(&self, z: &[f64]) -> Result<RenderOutput> {
        let out = GeneratorGraph::from_latent(&self.params, &self.net.synthesis, z, &self.camera, 1.0, false)?.outputs()?;
        let verts = blend_hair_shape(&self.blend, &out.theta)?;
        self.rig.compose(&out.face, &out.hair, &verts)?.render(&self.camera, self.size)
    }

    /// Gradient of `Σ upstream · render(z)` w.r.t. `z`.
    pub fn latent_gradient(&self, z: &[f64], upstream: &RenderGrads) -> Result<Vec<f64>> {
        let graph = GeneratorGraph::from_latent(&self.params, &self.net.synthesis, z, &self.camera, 1.0, false)?;
        let out = graph.outputs()?;
        let verts = blend_hair_shape(&self.blend, &out.theta)?;
        let head = self.rig.compose(&out.face, &out.hair, &verts)?;
        let acc = head.render_backward(&self.camera, self.size, upstream)?;
        let grads = self.rig.compose_backward(&out.face, &out.hair, &head, &acc, None)?;
        let d_theta = blend_hair_shape_backward(&self.blend, &grads.hair_vertices)?;
        let g = graph.backward(Some(&grads.hair), Some(&grads.face), Some(&d_theta))?;
        g.z.ok_or_else(|| Error::Usage("latent gradient missing".into()))
    }
}

/// `∂ pixel / ∂ z` through mapping, synthesis, blend shapes, spawning and
/// rendering, for the rgb and mask values of a few covered pixels.
pub fn check_end_to_end(seed: u64) -> Result<Check> {
    let e = EndToEnd::toy(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = sample_latent(&mut rng, e.net.synthesis.z_dim);
    let base = e.render(&z)?;
    let n = e.size * e.size;
    let covered: Vec<usize> = (0..n).filter(|&p| base.mask[p] > 0.2).collect();
    if covered.is_empty() {
        return Err(Error::Render("toy head does not cover any pixel".into()));
    }
    let mut check = Check::new("end-to-end d(pixel)/dz", 1e-3, 1e-8);
    let h = 1e-6;
    for j in 0..4 {
        let p = covered[(j * covered.len()) / 4];
        for channel in 0..4 {
            let mut up = RenderGrads {
                rgb: vec![0.0; 3 * n],
                mask: vec![0.0; n],
                seg: vec![0.0; 3 * n],
            };
            let pick = |r: &RenderOutput| if channel < 3 { r.rgb[3 * p + channel] } else { r.mask[p] };
            if channel < 3 {
                up.rgb[3 * p + channel] = 1.0;
            } else {
                up.mask[p] = 1.0;
            }
            let g = e.latent_gradient(&z, &up)?;
            for i in 0..z.len() {
                let (mut zp, mut zm) = (z.clone(), z.clone());
                zp[i] += h;
                zm[i] -= h;
                check.compare(g[i], (pick(&e.render(&zp)?) - pick(&e.render(&zm)?)) / (2.0 * h));
            }
        }
    }
    Ok(check)
}

/// Every check at a small size.
pub fn run_all(seed: u64) -> Result<Vec<Check>> {
    let mut renderer = Check::new("renderer", 1e-3, 1e-8);
    for s in 0..3 {
        renderer.merge(&check_renderer(seed + s, 12, 24)?);
    }
    let (generator, generator_params) = check_generator(seed)?;
    Ok(vec![
        renderer,
        check_silhouette(seed)?,
        check_spawn(seed)?,
        check_poisson(seed)?,
        check_losses(seed)?,
        generator,
        generator_params,
        check_discriminator(seed)?,
        check_end_to_end(seed)?,
    ])
}
