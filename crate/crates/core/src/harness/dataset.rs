//! Procedural multi-view heads with exact ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{CameraPose, CameraRing};
use crate::error::{Error, Result};
use crate::math::{logit, Vec3};
use crate::mesh::{HairStyle, TemplateMesh};
use crate::render::{reference_render, RenderOptions};
use crate::scene::{surface_points, GaussianTextureMap, UvRig, CH_COLOR, CH_OPACITY, CH_SCALE};
use crate::silhouette::DEFAULT_SOFTNESS;

use super::pipeline::{HeadRig, RigSpec};

/// Opacity of every ground-truth Gaussian.
pub const TRUTH_OPACITY: f64 = 0.97;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub scenes: usize,
    pub views: usize,
    pub image_size: usize,
    pub rig: RigSpec,
    pub radius: f64,
    pub pitch_deg: f64,
    pub focal: f64,
    /// Half-width of the uniform log-scale jitter applied to the tangent
    /// axes of the rig-aligned prior.
    pub scale_jitter: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            scenes: 1,
            views: 8,
            image_size: 128,
            rig: RigSpec::default(),
            radius: 160.0,
            pitch_deg: 10.0,
            focal: 1.4,
            scale_jitter: 0.15,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        self.rig.validate()?;
        if self.scenes == 0 || self.views == 0 {
            return Err(Error::Config("a dataset needs at least one scene and one view".into()));
        }
        if self.image_size == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        let positive = [self.radius, self.focal];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || !self.pitch_deg.is_finite() {
            return Err(Error::Config("radius and focal must be positive".into()));
        }
        if !(self.scale_jitter.is_finite() && self.scale_jitter >= 0.0) {
            return Err(Error::Config("scale jitter must be non-negative".into()));
        }
        if self.radius <= 40.0 {
            return Err(Error::Config(format!("camera radius {} is inside the head", self.radius)));
        }
        Ok(())
    }

    pub fn ring(&self) -> CameraRing {
        CameraRing {
            count: self.views,
            radius: self.radius,
            yaw_start_deg: 0.0,
            yaw_span_deg: 360.0,
            pitch_deg: self.pitch_deg,
            focal: self.focal,
        }
    }
}

/// Ground truth of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewTruth {
    pub yaw_deg: f64,
    pub camera: CameraPose,
    /// `H×W×3`.
    pub rgb: Vec<f64>,
    /// Binary foreground, `seg ≠ 0`.
    pub mask: Vec<f64>,
    /// Per-pixel class: 0 background, 1 face, 2 hair.
    pub seg: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub style: HairStyle,
    pub hair_vertices: Vec<Vec3>,
    pub face_texture: GaussianTextureMap,
    pub hair_texture: GaussianTextureMap,
    pub views: Vec<ViewTruth>,
}

impl SyntheticScene {
    /// Renders the ground truth of this scene from `camera`.
    pub fn render_view(&self, rig: &HeadRig, camera: &CameraPose, yaw_deg: f64, size: usize) -> Result<ViewTruth> {
        let head = rig.compose(&self.face_texture, &self.hair_texture, &self.hair_vertices)?;
        let img = reference_render(&head.combined, camera, size, size, &RenderOptions::default())?;
        let labels = rig.mesh_labels(&self.hair_vertices, camera, size, DEFAULT_SOFTNESS)?;
        let seg: Vec<usize> = labels.hard.iter().map(|&v| v.round() as usize).collect();
        Ok(ViewTruth {
            yaw_deg,
            camera: camera.clone(),
            rgb: img.rgb,
            mask: seg.iter().map(|&c| if c != 0 { 1.0 } else { 0.0 }).collect(),
            seg,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub spec: DatasetSpec,
    pub rig: HeadRig,
    pub scenes: Vec<SyntheticScene>,
}

impl SyntheticDataset {
    /// Hair meshes of every scene, for building a blend-shape model.
    pub fn hair_meshes(&self) -> Vec<TemplateMesh> {
        self.scenes.iter().map(|s| self.rig.hair_mesh(&s.style)).collect()
    }

    pub fn view_count(&self) -> usize {
        self.spec.views
    }
}

/// Random member of the procedural hairstyle family.
pub fn random_hair_style(rng: &mut impl Rng) -> HairStyle {
    HairStyle {
        length: rng.random_range(-0.1..0.15),
        flare: rng.random_range(0.0..0.25),
        volume: rng.random_range(-0.02..0.08),
        back_length: rng.random_range(0.0..0.3),
    }
}

/// Smooth color field over the surface.
struct Palette {
    base: [f64; 3],
    amplitude: f64,
    frequency: Vec3,
    phase: [f64; 3],
    stripes: f64,
}

impl Palette {
    fn skin(rng: &mut impl Rng) -> Self {
        let tone = rng.random_range(0.0..1.0);
        Self {
            base: [0.85 - 0.45 * tone, 0.65 - 0.4 * tone, 0.5 - 0.3 * tone],
            amplitude: 0.12,
            frequency: Vec3::from_fn(|_, _| rng.random_range(0.05..0.15)),
            phase: std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU)),
            stripes: 0.0,
        }
    }

    fn hair(rng: &mut impl Rng) -> Self {
        let shade = rng.random_range(0.0..1.0);
        let warm = rng.random_range(0.0..1.0);
        Self {
            base: [0.15 + 0.6 * shade * (0.6 + 0.4 * warm), 0.1 + 0.45 * shade, 0.06 + 0.3 * shade * (1.0 - warm)],
            amplitude: 0.06,
            frequency: Vec3::from_fn(|_, _| rng.random_range(0.1..0.2)),
            phase: std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU)),
            stripes: rng.random_range(0.05..0.15),
        }
    }

    fn color(&self, p: &Vec3) -> [f64; 3] {
        let wave = (p.component_mul(&self.frequency)).sum();
        let azimuth = p.x.atan2(p.z);
        let strand = 1.0 + self.stripes * (24.0 * azimuth).sin();
        std::array::from_fn(|c| ((self.base[c] + self.amplitude * (wave + self.phase[c]).sin()) * strand).clamp(0.02, 0.98))
    }
}

/// Ground-truth texture: the rig-aligned prior with jittered tangent
/// scales, palette colors and a fixed high opacity.
fn truth_texture(rig: &UvRig, prior: GaussianTextureMap, vertices: &[Vec3], palette: &Palette, jitter: f64, rng: &mut impl Rng) -> Result<GaussianTextureMap> {
    let mut tex = prior;
    let anchors = surface_points(rig, vertices)?;
    for ((t, _), a) in rig.valid_texels().zip(&anchors) {
        let texel = tex.texel_mut(t);
        for k in 0..2 {
            if jitter > 0.0 {
                texel[CH_SCALE + k] += rng.random_range(-jitter..=jitter);
            }
        }
        for (k, c) in palette.color(a).into_iter().enumerate() {
            texel[CH_COLOR + k] = logit(c);
        }
        texel[CH_OPACITY] = logit(TRUTH_OPACITY);
    }
    Ok(tex)
}

/// Deterministic synthetic dataset: every scene shares the rig and the
/// camera ring and draws its own hairstyle and palettes.
pub fn make_synthetic_dataset(spec: &DatasetSpec, seed: u64) -> Result<SyntheticDataset> {
    spec.validate()?;
    let rig = HeadRig::new(spec.rig)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ring = spec.ring();
    let cameras = ring.cameras();
    let yaws = ring.yaws();
    let mut scenes = Vec::with_capacity(spec.scenes);
    for _ in 0..spec.scenes {
        let style = random_hair_style(&mut rng);
        let hair_vertices = rig.hair_mesh(&style).vertices;
        let (skin, hair) = (Palette::skin(&mut rng), Palette::hair(&mut rng));
        let (face_prior, hair_prior) = rig.prior_textures(&hair_vertices)?;
        let face_texture = truth_texture(&rig.face_rig, face_prior, &rig.face_mesh.vertices, &skin, spec.scale_jitter, &mut rng)?;
        let hair_texture = truth_texture(&rig.hair_rig, hair_prior, &hair_vertices, &hair, spec.scale_jitter, &mut rng)?;
        let mut scene = SyntheticScene {
            style,
            face_texture,
            hair_texture,
            hair_vertices,
            views: Vec::new(),
        };
        scene.views = cameras
            .iter()
            .zip(&yaws)
            .map(|(c, &y)| scene.render_view(&rig, c, y, spec.image_size))
            .collect::<Result<_>>()?;
        scenes.push(scene);
    }
    Ok(SyntheticDataset {
        spec: spec.clone(),
        rig,
        scenes,
    })
}
