//! Direct texture fitting against multi-view ground truth.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::losses::{l_mask, l_pos_reg, l_rgb, l_scale_reg, l_seg, l_uv_tv, total_loss, LossReport, LossTerms, LossWeights};
use crate::math::Vec3;
use crate::optim::{Adam, AdamConfig};
use crate::render::RenderGrads;
use crate::scene::{GaussianGrads, GaussianTextureMap, UvRig, CH_COLOR, CH_DELTA, CH_OPACITY, CH_ROTATION, CH_SCALE, TEXTURE_CHANNELS};

use super::dataset::{SyntheticDataset, SyntheticScene};
use super::metrics::{mean_metrics, MetricsLog, ViewMetrics};
use super::pipeline::{HeadGaussians, HeadGrads, HeadRig};

/// Adam learning rates per texture channel group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelRates {
    pub delta: f64,
    pub rotation: f64,
    pub scale: f64,
    pub color: f64,
    pub opacity: f64,
}

impl Default for ChannelRates {
    fn default() -> Self {
        Self {
            delta: 0.02,
            rotation: 0.01,
            scale: 0.01,
            color: 0.05,
            opacity: 0.05,
        }
    }
}

impl ChannelRates {
    /// Multiplies every rate by `f`.
    pub fn scaled(&self, f: f64) -> Self {
        Self {
            delta: self.delta * f,
            rotation: self.rotation * f,
            scale: self.scale * f,
            color: self.color * f,
            opacity: self.opacity * f,
        }
    }

    fn channel(&self, c: usize) -> f64 {
        match c {
            c if c < CH_ROTATION => self.delta,
            c if c < CH_SCALE => self.rotation,
            c if c < CH_COLOR => self.scale,
            c if c < CH_OPACITY => self.color,
            _ => self.opacity,
        }
    }

    fn per_element(&self, len: usize) -> Vec<f64> {
        (0..len).map(|i| self.channel(i % TEXTURE_CHANNELS)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.delta, self.rotation, self.scale, self.color, self.opacity];
        if all.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::Config("learning rates must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FitInit {
    /// Random appearance around the rig-aligned prior geometry.
    Random { seed: u64 },
    /// The scene's own ground-truth textures.
    GroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub iterations: usize,
    pub weights: LossWeights,
    pub rates: ChannelRates,
    pub init: FitInit,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            weights: LossWeights {
                mask: 3.0,
                ..LossWeights::default()
            },
            rates: ChannelRates::default(),
            init: FitInit::Random { seed: 0 },
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    /// Textures of the lowest-loss iterate.
    pub face: GaussianTextureMap,
    pub hair: GaussianTextureMap,
    /// Loss report before each update.
    pub trace: Vec<LossReport>,
    /// Best total loss so far, per iteration.
    pub best: Vec<f64>,
    pub views: Vec<ViewMetrics>,
}

impl FitResult {
    /// Mean psnr, seg accuracy and mask IoU over all views.
    pub fn summary(&self) -> (f64, f64, f64) {
        mean_metrics(&self.views)
    }

    /// Largest clamped-offset norm among the fitted Gaussians.
    pub fn max_offset(&self, rig: &HeadRig, scene: &SyntheticScene) -> Result<f64> {
        let head = rig.compose(&self.face, &self.hair, &scene.hair_vertices)?;
        Ok(head.combined.offsets.iter().map(|o| o.norm()).fold(0.0, f64::max))
    }
}

/// Random texture around `prior`: small offsets, perturbed rotation and
/// scale, random colors and mid opacity. Invalid texels stay zero.
pub fn random_texture(rig: &UvRig, prior: &GaussianTextureMap, rng: &mut ChaCha8Rng) -> GaussianTextureMap {
    let mut tex = prior.clone();
    let n = |s: f64| Normal::new(0.0, s).expect("positive deviation");
    let (small, tenth, unit, half) = (n(0.05), n(0.1), n(1.0), n(0.5));
    for (t, _) in rig.valid_texels() {
        let texel = tex.texel_mut(t);
        for k in 0..3 {
            texel[CH_DELTA + k] = small.sample(rng);
            texel[CH_SCALE + k] += tenth.sample(rng);
            texel[CH_COLOR + k] = unit.sample(rng);
        }
        for k in 0..4 {
            texel[CH_ROTATION + k] += small.sample(rng);
        }
        texel[CH_OPACITY] = half.sample(rng);
    }
    tex
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Adds the offset and scale regularizers of `head` to `terms` and their
/// scale gradient to `acc`; returns the weighted offset gradient.
pub(crate) fn regularize(head: &HeadGaussians, weights: &LossWeights, terms: &mut LossTerms, acc: &mut GaussianGrads) -> Vec<Vec3> {
    let (pos, d_pos) = l_pos_reg(&head.combined.offsets);
    let scales: Vec<Vec3> = head.combined.gaussians.iter().map(|g| g.scale).collect();
    let (scale, d_scale) = l_scale_reg(&scales);
    terms.pos = pos;
    terms.scale = scale;
    for (a, d) in acc.scale.iter_mut().zip(&d_scale) {
        *a += weights.scale * d;
    }
    d_pos.iter().map(|d| d * weights.pos).collect()
}

/// Adds the UV total variation of both textures.
pub(crate) fn add_uv_tv(
    rig: &HeadRig,
    face: &GaussianTextureMap,
    hair: &GaussianTextureMap,
    weights: &LossWeights,
    terms: &mut LossTerms,
    grads: &mut HeadGrads,
) -> Result<()> {
    let (uv_face, d_face) = l_uv_tv(face, &rig.face_rig.validity_mask())?;
    let (uv_hair, d_hair) = l_uv_tv(hair, &rig.hair_rig.validity_mask())?;
    terms.uv = uv_face + uv_hair;
    axpy(&mut grads.face.data, weights.uv, &d_face.data);
    axpy(&mut grads.hair.data, weights.uv, &d_hair.data);
    Ok(())
}

pub(crate) fn add_grads(acc: &mut GaussianGrads, g: &GaussianGrads, scale: f64) {
    for i in 0..acc.len() {
        acc.position[i] += g.position[i] * scale;
        acc.scale[i] += g.scale[i] * scale;
        for k in 0..4 {
            acc.rotation[i][k] += g.rotation[i][k] * scale;
        }
        for k in 0..3 {
            acc.color[i][k] += g.color[i][k] * scale;
            acc.label[i][k] += g.label[i][k] * scale;
        }
        acc.opacity[i] += g.opacity[i] * scale;
    }
}

/// Reconstruction loss of `scene` under the given textures (view-averaged
/// image terms plus regularizers) and its gradient.
pub fn reconstruction_objective(
    rig: &HeadRig,
    scene: &SyntheticScene,
    image_size: usize,
    face: &GaussianTextureMap,
    hair: &GaussianTextureMap,
    weights: &LossWeights,
) -> Result<(LossReport, HeadGrads)> {
    let head = rig.compose(face, hair, &scene.hair_vertices)?;
    let n = head.combined.len();
    let inv = 1.0 / scene.views.len() as f64;
    let mut terms = LossTerms::default();
    let mut acc = GaussianGrads::zeros(n);
    for view in &scene.views {
        let img = head.render(&view.camera, image_size)?;
        let (lr, gr) = l_rgb(&img.rgb, &view.rgb)?;
        let (lm, gm) = l_mask(&img.mask, &view.mask)?;
        let (ls, gs) = l_seg(&img.seg, &view.seg)?;
        terms.rgb += lr * inv;
        terms.mask += lm * inv;
        terms.seg += ls * inv;
        let scaled = |g: Vec<f64>, w: f64| g.into_iter().map(|v| v * w * inv).collect();
        let upstream = RenderGrads {
            rgb: scaled(gr, weights.rgb),
            mask: scaled(gm, weights.mask),
            seg: scaled(gs, weights.seg),
        };
        add_grads(&mut acc, &head.render_backward(&view.camera, image_size, &upstream)?, 1.0);
    }
    let d_offsets = regularize(&head, weights, &mut terms, &mut acc);
    let mut grads = rig.compose_backward(face, hair, &head, &acc, Some(&d_offsets))?;
    add_uv_tv(rig, face, hair, weights, &mut terms, &mut grads)?;
    Ok((total_loss(&terms, weights, n)?, grads))
}

/// Renders the scene's views under the given textures and measures them.
pub fn evaluate_views(
    rig: &HeadRig,
    scene: &SyntheticScene,
    image_size: usize,
    face: &GaussianTextureMap,
    hair: &GaussianTextureMap,
) -> Result<Vec<ViewMetrics>> {
    let head = rig.compose(face, hair, &scene.hair_vertices)?;
    scene
        .views
        .iter()
        .map(|v| ViewMetrics::measure(&head.render(&v.camera, image_size)?, v))
        .collect()
}

/// Optimizes raw face and hair textures of scene `index` with Adam against
/// all of its views, logging one loss line per iteration.
pub fn fit_gaussians(dataset: &SyntheticDataset, index: usize, config: &FitConfig, log: &mut MetricsLog) -> Result<FitResult> {
    let scene = dataset
        .scenes
        .get(index)
        .ok_or_else(|| Error::Config(format!("scene {index} is out of range ({} scenes)", dataset.scenes.len())))?;
    if scene.views.len() < 2 {
        return Err(Error::Config("fitting needs at least two views".into()));
    }
    if config.iterations == 0 {
        return Err(Error::Config("iteration budget must be at least 1".into()));
    }
    config.weights.validate()?;
    config.rates.validate()?;
    let rig = &dataset.rig;
    let size = dataset.spec.image_size;
    let (mut face, mut hair) = match config.init {
        FitInit::GroundTruth => (scene.face_texture.clone(), scene.hair_texture.clone()),
        FitInit::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (face_prior, hair_prior) = rig.prior_textures(&scene.hair_vertices)?;
            (random_texture(&rig.face_rig, &face_prior, &mut rng), random_texture(&rig.hair_rig, &hair_prior, &mut rng))
        }
    };
    let rates_face = config.rates.per_element(face.data.len());
    let rates_hair = config.rates.per_element(hair.data.len());
    let mut adam_face = Adam::new(face.data.len(), AdamConfig::default());
    let mut adam_hair = Adam::new(hair.data.len(), AdamConfig::default());

    let mut trace = Vec::with_capacity(config.iterations);
    let mut best = Vec::with_capacity(config.iterations);
    let mut best_textures = (face.clone(), hair.clone());
    let mut best_total = f64::INFINITY;
    for it in 0..config.iterations {
        let (report, grads) = reconstruction_objective(rig, scene, size, &face, &hair, &config.weights)?;
        if !report.total.is_finite() {
            return Err(Error::Numeric(format!("fit loss is not finite at iteration {it}")));
        }
        log.push(report.log_line(it))?;
        if report.total < best_total {
            best_total = report.total;
            best_textures = (face.clone(), hair.clone());
        }
        best.push(best_total);
        trace.push(report);
        let step = |e: Error| Error::Numeric(format!("iteration {it}: {e}"));
        adam_face.step_with_rates(&mut face.data, &grads.face.data, &rates_face).map_err(step)?;
        adam_hair.step_with_rates(&mut hair.data, &grads.hair.data, &rates_hair).map_err(step)?;
    }
    let (face, hair) = best_textures;
    let views = evaluate_views(rig, scene, size, &face, &hair)?;
    for v in &views {
        log.push(v.log_line())?;
    }
    Ok(FitResult {
        face,
        hair,
        trace,
        best,
        views,
    })
}
